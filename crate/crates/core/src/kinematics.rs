//! Borgnakke–Larsen collision rules.
//!
//! A pre-collisional pair `(v, I), (v*, I*)` with total energy
//! `E = (m/4)|v - v*|^2 + I + I*` is mapped to a post-collisional pair by a unit
//! vector `sigma`, the fraction `R` of `E` that ends up kinetic, and the share
//! `r` of the remaining internal energy given to the first molecule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionState {
    pub v: Vec3,
    pub i: f64,
    pub v_star: Vec3,
    pub i_star: f64,
}

impl CollisionState {
    pub fn new(v: Vec3, i: f64, v_star: Vec3, i_star: f64) -> Result<Self> {
        if !(i >= 0.0 && i_star >= 0.0) {
            return Err(Error::Domain(format!(
                "internal energies must be nonnegative, got I = {i}, I* = {i_star}"
            )));
        }
        Ok(Self {
            v,
            i,
            v_star,
            i_star,
        })
    }

    /// Relative velocity `u = v - v*`.
    pub fn relative_velocity(&self) -> Vec3 {
        self.v - self.v_star
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlParams {
    pub sigma: Vec3,
    pub r: f64,
    pub big_r: f64,
}

impl BlParams {
    pub fn new(sigma: Vec3, r: f64, big_r: f64) -> Result<Self> {
        if (sigma.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "sigma must be a unit vector, |sigma| = {}",
                sigma.norm()
            )));
        }
        if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&big_r) {
            return Err(Error::Domain(format!(
                "r and R must lie in [0, 1], got r = {r}, R = {big_r}"
            )));
        }
        Ok(Self { sigma, r, big_r })
    }
}

/// `E = (m/4)|v - v*|^2 + I + I*`.
#[inline]
pub fn total_energy(s: &CollisionState, m: f64) -> f64 {
    0.25 * m * (s.v - s.v_star).norm_squared() + s.i + s.i_star
}

/// Post-collisional state.
#[inline]
pub fn transform(s: &CollisionState, p: &BlParams, m: f64) -> CollisionState {
    let e = total_energy(s, m);
    let mid = 0.5 * (s.v + s.v_star);
    let shift = (p.big_r * e / m).sqrt() * p.sigma;
    let internal = (1.0 - p.big_r) * e;
    CollisionState {
        v: mid + shift,
        i: p.r * internal,
        v_star: mid - shift,
        i_star: (1.0 - p.r) * internal,
    }
}

/// Parameters that map `primed` back to `s`: `sigma' = u/|u|`, `r' = I/(I + I*)`
/// and `R' = m|u|^2/(4E)`, all computed from the unprimed state.
///
/// `r'` is set to 1/2 when `I + I* = 0`. The direction is undefined when `u = 0`
/// and the call fails with [`Error::DegenerateDirection`].
pub fn inverse_params(s: &CollisionState, primed: &CollisionState, m: f64) -> Result<BlParams> {
    let e = total_energy(s, m);
    let e_primed = total_energy(primed, m);
    if (e - e_primed).abs() > 1e-9 * e.max(1.0) {
        return Err(Error::Domain(format!(
            "states carry different total energies ({e} vs {e_primed})"
        )));
    }
    let u = s.relative_velocity();
    let norm = u.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let internal = s.i + s.i_star;
    let r = if internal > 0.0 { s.i / internal } else { 0.5 };
    let big_r = if e > 0.0 {
        (0.25 * m * norm * norm / e).min(1.0)
    } else {
        0.0
    };
    Ok(BlParams {
        sigma: u / norm,
        r,
        big_r,
    })
}

/// Jacobian `(1 - r)(1 - R)/8` of `(v*, I*) -> (v'*, I'*)` at fixed `(v, I, sigma, r, R)`.
#[inline]
pub fn jacobian_bl(r: f64, big_r: f64) -> f64 {
    (1.0 - r) * (1.0 - big_r) / 8.0
}

/// Orthonormal pair completing `n` (unit) to a right-handed basis.
#[inline]
pub(crate) fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let sign = 1.0f64.copysign(n[2]);
    let a = -1.0 / (sign + n[2]);
    let b = n[0] * n[1] * a;
    (
        Vec3::new(1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0]),
        Vec3::new(b, sign + n[1] * n[1] * a, -n[1]),
    )
}
