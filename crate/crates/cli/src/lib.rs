//! Configuration, scenario execution, verification suites and data export for
//! the `polyboltz` binary.

pub mod commands;
pub mod config;
pub mod field_io;
pub mod output;
pub mod suites;
