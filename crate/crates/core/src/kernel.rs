//! Collision kernel ingredients and the constants built from them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::kinematics::{total_energy, BlParams, CollisionState};
use crate::pair_sum::pair_sum;
use crate::phase_space::{bracket_unchecked, GridValues, ModelParams, PhaseGrid};
use crate::quadrature::integrate_adaptive;
use crate::Vec3;

const QUAD_SEGMENTS: usize = 4000;

/// Angular part `b(x)`, `x = u_hat . sigma`, supported on `x in [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AngularKernel {
    Constant {
        value: f64,
    },
    /// `scale * x^exponent` with `exponent > -1`.
    Power {
        scale: f64,
        exponent: f64,
    },
    /// Piecewise-linear interpolation of samples covering `[0, 1]`.
    Table {
        x: Vec<f64>,
        b: Vec<f64>,
    },
}

impl AngularKernel {
    /// `b = 1/(2 pi)`, the constant kernel with `||b||_1 = 1`.
    pub fn unit() -> Self {
        Self::Constant {
            value: 1.0 / (2.0 * PI),
        }
    }

    /// Constant kernel whose collision frequency constant `kappa` equals `target` at `alpha`.
    pub fn with_kappa(target: f64, alpha: f64) -> Result<Self> {
        let d = d_alpha_norm(alpha)?;
        let b = Self::Constant {
            value: target / (2.0 * PI * d),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { value } => {
                if !(*value >= 0.0 && value.is_finite()) {
                    return Err(Error::Domain(format!(
                        "constant kernel must be finite and nonnegative, got {value}"
                    )));
                }
            }
            Self::Power { scale, exponent } => {
                if !(*scale >= 0.0 && scale.is_finite()) {
                    return Err(Error::Domain(format!(
                        "power kernel scale must be finite and nonnegative, got {scale}"
                    )));
                }
                if !(*exponent > -1.0 && exponent.is_finite()) {
                    return Err(Error::Domain(format!(
                        "power kernel exponent must exceed -1, got {exponent}"
                    )));
                }
            }
            Self::Table { x, b } => {
                if x.len() != b.len() || x.len() < 2 {
                    return Err(Error::Domain(
                        "kernel table needs at least two (x, b) pairs of equal length".into(),
                    ));
                }
                if x[0].abs() > 1e-12 || (x[x.len() - 1] - 1.0).abs() > 1e-12 {
                    return Err(Error::Domain(
                        "kernel table must span x = 0 to x = 1".into(),
                    ));
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Domain("kernel table abscissae must increase".into()));
                }
                if b.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::Domain(
                        "kernel table values must be finite and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `b(x)`; zero for `x < 0`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let x = x.min(1.0);
        match self {
            Self::Constant { value } => *value,
            Self::Power { scale, exponent } => scale * x.powf(*exponent),
            Self::Table { x: xs, b } => {
                let pos = xs.partition_point(|t| *t <= x);
                if pos == 0 {
                    return b[0];
                }
                if pos >= xs.len() {
                    return b[b.len() - 1];
                }
                let t = (x - xs[pos - 1]) / (xs[pos] - xs[pos - 1]);
                b[pos - 1] * (1.0 - t) + b[pos] * t
            }
        }
    }

    /// Integral of `b(x)^power` over `[0, 1]`.
    fn integral_of_power(&self, power: i32) -> f64 {
        match self {
            Self::Table { x, b } => x
                .windows(2)
                .zip(b.windows(2))
                .map(|(xw, bw)| 0.5 * (xw[1] - xw[0]) * (bw[0].powi(power) + bw[1].powi(power)))
                .sum(),
            Self::Constant { .. } => {
                integrate_adaptive(|x| self.eval(x).powi(power), 0.0, 1.0, 1e-15, 1e-13, 100).value
            }
            Self::Power { exponent, .. } => {
                // x = t^k removes the endpoint singularity of x^(power * exponent).
                let effective = power as f64 * exponent;
                let k = (1.0 / (1.0 + effective)).ceil().max(2.0);
                integrate_adaptive(
                    |t| k * t.powf(k - 1.0) * self.eval(t.powf(k)).powi(power),
                    0.0,
                    1.0,
                    1e-15,
                    1e-13,
                    QUAD_SEGMENTS,
                )
                .value
            }
        }
    }
}

/// `||b||_{L^1(S^2)} = 2 pi int_0^1 b(x) dx`.
pub fn b_l1(b: &AngularKernel) -> Result<f64> {
    b.validate()?;
    Ok(2.0 * PI * b.integral_of_power(1))
}

/// `||b||_{L^2(S^2)} = (2 pi int_0^1 b(x)^2 dx)^{1/2}`.
pub fn b_l2(b: &AngularKernel) -> Result<f64> {
    b.validate()?;
    if let AngularKernel::Power { scale, exponent } = b {
        if *scale > 0.0 && 2.0 * exponent <= -1.0 {
            return Err(Error::InfiniteNorm(format!(
                "b(x) = x^{exponent} is not square integrable (needs exponent > -1/2)"
            )));
        }
    }
    Ok((2.0 * PI * b.integral_of_power(2)).sqrt())
}

/// `d_alpha(r, R) = r^alpha (1-r)^alpha (1-R)^{2 alpha + 1} sqrt(R)`.
///
/// For `alpha < 0` the endpoints `r = 0` and `r = 1` return `+inf` (an integrable
/// singularity).
#[inline]
pub fn d_alpha(r: f64, big_r: f64, alpha: f64) -> f64 {
    if alpha < 0.0 && (r <= 0.0 || r >= 1.0) {
        return f64::INFINITY;
    }
    (r * (1.0 - r)).powf(alpha) * (1.0 - big_r).powf(2.0 * alpha + 1.0) * big_r.sqrt()
}

/// `||d_alpha||_{L^1([0,1]^2)} = B(alpha+1, alpha+1) B(3/2, 2 alpha + 2)`.
pub fn d_alpha_norm(alpha: f64) -> Result<f64> {
    if !(alpha > -1.0) {
        return Err(Error::Divergence(format!(
            "||d_alpha||_1 is finite only for alpha > -1, got {alpha}"
        )));
    }
    Ok((ln_beta(alpha + 1.0, alpha + 1.0) + ln_beta(1.5, 2.0 * alpha + 2.0)).exp())
}

/// `kappa = ||b||_1 ||d_alpha||_1`.
pub fn kappa(b: &AngularKernel, alpha: f64) -> Result<f64> {
    Ok(b_l1(b)? * d_alpha_norm(alpha)?)
}

/// Unit vector `u/|u|`, or `e1` when `u = 0`.
#[inline]
pub(crate) fn direction_or_e1(u: &Vec3) -> Vec3 {
    let n = u.norm();
    if n > 0.0 {
        u / n
    } else {
        Vec3::x()
    }
}

/// Axis `u/|u|` about which `sigma` is drawn. When `u = 0` no axis is preferred:
/// `e1` or `-e1` is returned according to `flip`, and callers weight both equally.
#[inline]
pub(crate) fn collision_axis(u: &Vec3, flip: bool) -> Vec3 {
    let n = u.norm();
    if n > 0.0 {
        u / n
    } else if flip {
        -Vec3::x()
    } else {
        Vec3::x()
    }
}

/// Axis flips to average over: both when `u = 0`, otherwise none.
#[inline]
pub(crate) fn axis_flips(u: &Vec3) -> &'static [bool] {
    if u.norm() > 0.0 {
        &[false]
    } else {
        &[false, true]
    }
}

/// `b(u_hat . sigma) (E/m)^{gamma/2}`, zero on the back hemisphere. When `u = 0`
/// the direction is taken as `e1`.
pub fn kernel_b(s: &CollisionState, p: &BlParams, params: &ModelParams, b: &AngularKernel) -> f64 {
    let u_hat = direction_or_e1(&s.relative_velocity());
    let x = u_hat.dot(&p.sigma);
    if x < 0.0 {
        return 0.0;
    }
    let e = total_energy(s, params.m);
    b.eval(x) * (e / params.m).powf(0.5 * params.gamma)
}

/// Weight `psi(r, R)` of an averaging operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiWeight {
    /// `psi = 1`.
    One,
    /// `psi = 1/((1-r)(1-R)) + 1/sqrt(R)`.
    Rho1,
    /// `psi = alpha (r^{delta-1} + r^delta (1-r)^{-1}) (1-R)^{delta-1}`.
    Rho2,
}

impl PsiWeight {
    pub const ALL: [PsiWeight; 3] = [PsiWeight::One, PsiWeight::Rho1, PsiWeight::Rho2];

    pub fn name(&self) -> &'static str {
        match self {
            Self::One => "psi_one",
            Self::Rho1 => "psi_rho1",
            Self::Rho2 => "psi_rho2",
        }
    }

    #[inline]
    pub fn eval(&self, r: f64, big_r: f64, alpha: f64, delta: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Rho1 => 1.0 / ((1.0 - r) * (1.0 - big_r)) + 1.0 / big_r.sqrt(),
            Self::Rho2 => {
                alpha
                    * (r.powf(delta - 1.0) + r.powf(delta) / (1.0 - r))
                    * (1.0 - big_r).powf(delta - 1.0)
            }
        }
    }

    /// Checks that `rho^psi` is finite for these parameters.
    pub fn check_finite(&self, alpha: f64, delta: f64) -> Result<()> {
        match self {
            Self::One if !(alpha > -0.5) => Err(Error::Divergence(format!(
                "psi_one requires alpha > -1/2, got alpha = {alpha}"
            ))),
            Self::Rho1 if !(alpha > 0.0) => Err(Error::Divergence(format!(
                "psi_rho1 requires alpha > 0, got alpha = {alpha}"
            ))),
            Self::Rho2 if !(alpha > 0.0) => Err(Error::Divergence(format!(
                "psi_rho2 requires alpha > 0, got alpha = {alpha}"
            ))),
            Self::Rho2 if !(alpha + delta > 0.5) => Err(Error::Divergence(format!(
                "psi_rho2 requires alpha + delta > 1/2, got alpha + delta = {}",
                alpha + delta
            ))),
            _ => Ok(()),
        }
    }

    /// `ln psi` as a sum of exponentials, in terms of `ln r`, `ln(1-r)`, `ln R`, `ln(1-R)`.
    fn log_terms(&self, l: &LogCoords, alpha: f64, delta: f64) -> ([f64; 2], usize) {
        match self {
            Self::One => ([0.0, 0.0], 1),
            Self::Rho1 => ([-l.rc - l.big_rc, -0.5 * l.big_r], 2),
            Self::Rho2 => {
                let common = alpha.ln() + (delta - 1.0) * l.big_rc;
                (
                    [common + (delta - 1.0) * l.r, common + delta * l.r - l.rc],
                    2,
                )
            }
        }
    }
}

struct LogCoords {
    r: f64,
    rc: f64,
    big_r: f64,
    big_rc: f64,
}

/// `rho^psi = 2^{7/4} int int (r (1-R))^{-1/2} psi(r, R) d_alpha(r, R) dr dR`, by nested
/// adaptive Gauss–Kronrod quadrature after `r = sin^2 theta`, `R = sin^2 phi`.
pub fn rho_psi(psi: PsiWeight, alpha: f64, delta: f64) -> Result<f64> {
    psi.check_finite(alpha, delta)?;
    let half_pi = 0.5 * PI;
    let outer = integrate_adaptive(
        |phi| {
            let (s_big, c_big) = phi.sin_cos();
            let (ls_big, lc_big) = (s_big.ln(), c_big.ln());
            let inner = integrate_adaptive(
                |theta| {
                    let (s, c) = theta.sin_cos();
                    let (ls, lc) = (s.ln(), c.ln());
                    let l = LogCoords {
                        r: 2.0 * ls,
                        rc: 2.0 * lc,
                        big_r: 2.0 * ls_big,
                        big_rc: 2.0 * lc_big,
                    };
                    // (r(1-R))^{-1/2} d_alpha times both sin^2 Jacobians 2 s c.
                    let base = -0.5 * (l.r + l.big_rc)
                        + alpha * (l.r + l.rc)
                        + (2.0 * alpha + 1.0) * l.big_rc
                        + 0.5 * l.big_r
                        + (4.0f64).ln()
                        + ls
                        + lc
                        + ls_big
                        + lc_big;
                    let (terms, n) = psi.log_terms(&l, alpha, delta);
                    terms[..n].iter().map(|t| (base + t).exp()).sum::<f64>()
                },
                0.0,
                half_pi,
                1e-300,
                1e-12,
                QUAD_SEGMENTS,
            );
            inner.value
        },
        0.0,
        half_pi,
        1e-300,
        1e-11,
        QUAD_SEGMENTS,
    );
    Ok(2f64.powf(1.75) * outer.value)
}

/// `sup_{(v,I)} ( int ((E/m)^a <v,I>^{-s} <v*,I*>^{-s})^2 dv* dI* )^{1/2}` over the
/// grid nodes, with the inner integral by the grid's midpoint rule.
pub fn constant_ca(a: f64, s: f64, params: &ModelParams, grid: &PhaseGrid) -> Result<f64> {
    if !(a > -1.25) {
        return Err(Error::Divergence(format!(
            "C_a requires a > -5/4, got a = {a}"
        )));
    }
    if !(s > 2.0 * a + 2.5) {
        return Err(Error::Divergence(format!(
            "C_a requires s > 2a + 5/2 = {}, got s = {s}",
            2.0 * a + 2.5
        )));
    }
    let m = params.m;
    let brackets: Vec<f64> = (0..grid.len())
        .map(|n| bracket_unchecked(&grid.velocity(n), grid.internal_energy(n), m))
        .collect();
    let coeff: Vec<f64> = brackets
        .iter()
        .map(|b| grid.weight() * b.powf(-2.0 * s))
        .collect();
    let sums = pair_sum(grid, m, &coeff, |x| x.powf(2.0 * a));
    Ok(sums
        .iter()
        .zip(&brackets)
        .map(|(sum, b)| b.powf(-s) * sum.sqrt())
        .fold(0.0, f64::max))
}

/// Returns `(|int_0^1 e^{-ixr} r^alpha (1-r)^alpha dr|, 2 min(1, 1/|x|))`.
pub fn oscillatory_bound_check(x: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    // r = sin^2 theta makes the integrand smooth for every alpha >= 0.
    let part = |use_cos: bool| {
        integrate_adaptive(
            |theta: f64| {
                let (s, c) = theta.sin_cos();
                let r = s * s;
                let amp = 2.0 * (s * c).powf(2.0 * alpha + 1.0);
                let phase = x * r;
                amp * if use_cos { phase.cos() } else { phase.sin() }
            },
            0.0,
            0.5 * PI,
            1e-14,
            1e-12,
            QUAD_SEGMENTS,
        )
        .value
    };
    let lhs = part(true).hypot(part(false));
    let rhs = 2.0 * if x.abs() <= 1.0 { 1.0 } else { 1.0 / x.abs() };
    Ok((lhs, rhs))
}

/// Minimum over nodes of `values / <v,I>^gamma`.
pub fn min_bracket_ratio(field: &impl GridValues, params: &ModelParams) -> f64 {
    let grid = field.grid();
    field
        .values()
        .iter()
        .enumerate()
        .map(|(n, v)| {
            v / bracket_unchecked(&grid.velocity(n), grid.internal_energy(n), params.m)
                .powf(params.gamma)
        })
        .fold(f64::INFINITY, f64::min)
}
