//! Binary field files.
//!
//! Layout, all little endian: the magic `PBZF`, a `u32` version (1), a `u32`
//! reserved word, then `lv: f64`, `nv: u64`, `imax: f64`, `ni: u64`,
//! `step: u64`, `t: f64`, followed by `nv^3 * ni` values as `f64` in row-major
//! order with the internal energy index running fastest.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use polyboltz::phase_space::{DistributionField, GridValues, PhaseGrid};

pub const MAGIC: &[u8; 4] = b"PBZF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 6 * 8;

/// A field together with the step and time it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub step: u64,
    pub t: f64,
    pub field: DistributionField,
}

pub fn encode(field: &DistributionField, step: u64, t: f64) -> Vec<u8> {
    let grid = field.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&grid.lv().to_le_bytes());
    out.extend_from_slice(&(grid.nv() as u64).to_le_bytes());
    out.extend_from_slice(&grid.imax().to_le_bytes());
    out.extend_from_slice(&(grid.ni() as u64).to_le_bytes());
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn word(bytes: &[u8], at: usize) -> [u8; 8] {
    bytes[at..at + 8].try_into().expect("slice of length 8")
}

pub fn decode(bytes: &[u8]) -> Result<FieldFile> {
    ensure!(
        bytes.len() >= HEADER_LEN,
        "field file too short ({} bytes)",
        bytes.len()
    );
    ensure!(&bytes[..4] == MAGIC, "not a field file (bad magic)");
    let version = u32::from_le_bytes(bytes[4..8].try_into()?);
    ensure!(
        version == VERSION,
        "unsupported field file version {version}"
    );
    let lv = f64::from_le_bytes(word(bytes, 12));
    let nv = u64::from_le_bytes(word(bytes, 20)) as usize;
    let imax = f64::from_le_bytes(word(bytes, 28));
    let ni = u64::from_le_bytes(word(bytes, 36)) as usize;
    let step = u64::from_le_bytes(word(bytes, 44));
    let t = f64::from_le_bytes(word(bytes, 52));
    let grid = Arc::new(PhaseGrid::new(lv, nv, imax, ni)?);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * grid.len() {
        bail!(
            "field file holds {} values, grid {nv}^3 x {ni} needs {}",
            body.len() / 8,
            grid.len()
        );
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of length 8")))
        .collect();
    Ok(FieldFile {
        step,
        t,
        field: DistributionField::new(grid, values)?,
    })
}

pub fn read(path: &Path) -> Result<FieldFile> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
