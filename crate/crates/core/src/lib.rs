//! Space-homogeneous Boltzmann equation for a polyatomic gas whose molecules
//! carry a continuous internal energy `I >= 0`.
//!
//! The crate is organised bottom-up:
//!
//! * [`phase_space`] holds the truncated `(v, I)` grid, distribution fields and norms.
//! * [`kinematics`] implements the Borgnakke–Larsen collision transform.
//! * [`kernel`] provides the angular kernel, `d_alpha` and closed-form constants.
//! * [`collision_op`] evaluates the collision frequency, gain and loss operators.
//! * [`solver`] advances the equation in time and splits trajectories into
//!   rough and smooth parts.
//! * [`diagnostics`] computes moments, entropy and inequality verdicts.
//! * [`family`] generates the analytic test fields used by the checks.

pub mod collision_op;
pub mod diagnostics;
pub mod error;
pub mod family;
pub mod kernel;
pub mod kinematics;
mod pair_sum;
pub mod phase_space;
pub mod quadrature;
mod reconstruction;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};

/// Three-component real vector used for velocities.
pub type Vec3 = nalgebra::Vector3<f64>;
