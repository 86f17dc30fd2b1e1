//! Truncated tensor grid over `(v, I)`, distribution storage and weighted norms.
//!
//! Nodes are cell centred: `v_k = -Lv + (k + 1/2) h_v` and `I_l = (l + 1/2) h_I`,
//! so every node carries the same midpoint weight `h_v^3 h_I` and no node sits
//! on `I = 0`. Values are stored flat with the internal-energy index running
//! fastest: `((i * nv + j) * nv + k) * ni + l`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Lebesgue bracket `sqrt(1 + |v|^2/2 + I/m)`.
pub fn bracket(v: &Vec3, i_energy: f64, m: f64) -> Result<f64> {
    if !(i_energy >= 0.0) {
        return Err(Error::Domain(format!(
            "internal energy must be nonnegative, got {i_energy}"
        )));
    }
    if !(m > 0.0) {
        return Err(Error::Domain(format!("mass must be positive, got {m}")));
    }
    Ok(bracket_unchecked(v, i_energy, m))
}

#[inline]
pub(crate) fn bracket_unchecked(v: &Vec3, i_energy: f64, m: f64) -> f64 {
    (1.0 + 0.5 * v.norm_squared() + i_energy / m).sqrt()
}

/// Physical parameters shared by every operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub m: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Small positive shift realising the `k+` weight indices as `k + eps_plus`.
    pub eps_plus: f64,
    /// Exponent of the `I^delta` weight in internal-energy regularity norms.
    pub delta: f64,
}

impl ModelParams {
    /// Builds parameters with `eps_plus = 0.01` and `delta = max(1/2 - alpha, 0)`.
    pub fn new(m: f64, alpha: f64, gamma: f64) -> Result<Self> {
        let params = Self {
            m,
            alpha,
            gamma,
            eps_plus: 0.01,
            delta: default_delta(alpha),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_eps_plus(mut self, eps_plus: f64) -> Result<Self> {
        self.eps_plus = eps_plus;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(Error::Domain(format!("m must be positive, got {}", self.m)));
        }
        if !(self.alpha > -1.0 && self.alpha.is_finite()) {
            return Err(Error::Domain(format!(
                "alpha must exceed -1, got {}",
                self.alpha
            )));
        }
        if !(0.0..=2.0).contains(&self.gamma) {
            return Err(Error::Domain(format!(
                "gamma must lie in [0, 2], got {}",
                self.gamma
            )));
        }
        if !(self.eps_plus > 0.0 && self.eps_plus.is_finite()) {
            return Err(Error::Domain(format!(
                "eps_plus must be positive, got {}",
                self.eps_plus
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Domain(format!(
                "delta must be nonnegative, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// `k + eps_plus`.
    pub fn plus(&self, k: f64) -> f64 {
        k + self.eps_plus
    }
}

pub fn default_delta(alpha: f64) -> f64 {
    (0.5 - alpha).max(0.0)
}

/// Uniform cell-centred grid on `[-Lv, Lv]^3 x [0, Imax]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    lv: f64,
    nv: usize,
    imax: f64,
    ni: usize,
    hv: f64,
    hi: f64,
    v_nodes: Vec<f64>,
    i_nodes: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(lv: f64, nv: usize, imax: f64, ni: usize) -> Result<Self> {
        if !(lv > 0.0 && lv.is_finite()) {
            return Err(Error::Config(format!("Lv must be positive, got {lv}")));
        }
        if !(imax > 0.0 && imax.is_finite()) {
            return Err(Error::Config(format!("Imax must be positive, got {imax}")));
        }
        if nv < 4 {
            return Err(Error::Config(format!("Nv must be at least 4, got {nv}")));
        }
        if ni < 4 {
            return Err(Error::Config(format!("NI must be at least 4, got {ni}")));
        }
        let hv = 2.0 * lv / nv as f64;
        let hi = imax / ni as f64;
        let v_nodes = (0..nv).map(|k| -lv + (k as f64 + 0.5) * hv).collect();
        let i_nodes = (0..ni).map(|l| (l as f64 + 0.5) * hi).collect();
        Ok(Self {
            lv,
            nv,
            imax,
            ni,
            hv,
            hi,
            v_nodes,
            i_nodes,
        })
    }

    pub fn lv(&self) -> f64 {
        self.lv
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn imax(&self) -> f64 {
        self.imax
    }

    pub fn ni(&self) -> usize {
        self.ni
    }

    pub fn hv(&self) -> f64 {
        self.hv
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn v_nodes(&self) -> &[f64] {
        &self.v_nodes
    }

    pub fn i_nodes(&self) -> &[f64] {
        &self.i_nodes
    }

    /// Total number of `(v, I)` nodes.
    pub fn len(&self) -> usize {
        self.nv * self.nv * self.nv * self.ni
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of velocity nodes.
    pub fn velocity_len(&self) -> usize {
        self.nv * self.nv * self.nv
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.nv + j) * self.nv + k) * self.ni + l
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 4] {
        let l = idx % self.ni;
        let rest = idx / self.ni;
        let k = rest % self.nv;
        let rest = rest / self.nv;
        [rest / self.nv, rest % self.nv, k, l]
    }

    /// Velocity of the node with flat velocity index `iv` (the flat index divided by `NI`).
    #[inline]
    pub fn velocity_of(&self, iv: usize) -> Vec3 {
        let k = iv % self.nv;
        let rest = iv / self.nv;
        Vec3::new(
            self.v_nodes[rest / self.nv],
            self.v_nodes[rest % self.nv],
            self.v_nodes[k],
        )
    }

    #[inline]
    pub fn velocity(&self, idx: usize) -> Vec3 {
        self.velocity_of(idx / self.ni)
    }

    #[inline]
    pub fn internal_energy(&self, idx: usize) -> f64 {
        self.i_nodes[idx % self.ni]
    }

    /// Midpoint quadrature weight carried by every node.
    #[inline]
    pub fn weight(&self) -> f64 {
        self.hv * self.hv * self.hv * self.hi
    }

    /// `(2 Lv)^3 Imax`.
    pub fn volume(&self) -> f64 {
        8.0 * self.lv * self.lv * self.lv * self.imax
    }

    pub fn contains(&self, v: &Vec3, i_energy: f64) -> bool {
        v.iter().all(|c| c.abs() <= self.lv) && (0.0..=self.imax).contains(&i_energy)
    }
}

/// Read access shared by nonnegative distributions and signed operator outputs.
pub trait GridValues {
    fn grid(&self) -> &PhaseGrid;
    fn values(&self) -> &[f64];
}

/// Nonnegative samples of a distribution function on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionField {
    grid: Arc<PhaseGrid>,
    values: Vec<f64>,
}

impl DistributionField {
    pub fn new(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Result<Self> {
        check_shape(&grid, values.len())?;
        if let Some((idx, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Domain(format!(
                "distribution value at node {idx} must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field from possibly slightly negative values, flooring them at zero.
    /// Returns the field and the total (weighted) mass removed by the floor.
    pub fn floored(grid: Arc<PhaseGrid>, mut values: Vec<f64>) -> Result<(Self, f64)> {
        check_shape(&grid, values.len())?;
        let mut removed = 0.0;
        for (idx, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::Domain(format!(
                    "distribution value at node {idx} is not finite"
                )));
            }
            if *v < 0.0 {
                removed -= *v;
                *v = 0.0;
            }
        }
        let removed = removed * grid.weight();
        Ok((Self { grid, values }, removed))
    }

    pub fn zeros(grid: Arc<PhaseGrid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Samples `f(v, I)` at every node. Negative or non-finite samples are rejected.
    pub fn from_fn(grid: Arc<PhaseGrid>, f: impl Fn(&Vec3, f64) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|idx| f(&grid.velocity(idx), grid.internal_energy(idx)))
            .collect();
        Self::new(grid, values)
    }

    pub fn grid_arc(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Multiplies by a nonnegative constant.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!(
                "scale factor must be finite and nonnegative, got {c}"
            )));
        }
        Ok(Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        })
    }

    pub fn to_scalar(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.clone(),
        }
    }
}

impl GridValues for DistributionField {
    fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Signed samples on a grid (operator outputs, derivatives, differences).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<PhaseGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Result<Self> {
        check_shape(&grid, values.len())?;
        Ok(Self { grid, values })
    }

    pub fn grid_arc(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn abs(&self) -> DistributionField {
        DistributionField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }
}

impl GridValues for ScalarField {
    fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_shape(grid: &PhaseGrid, found: usize) -> Result<()> {
    if found != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            found,
        });
    }
    Ok(())
}

/// Lebesgue exponent of a norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lp {
    One,
    Two,
    Infinity,
}

/// `||f <v,I>^k||_{L^p}` by midpoint quadrature (or the node maximum for `p = inf`).
pub fn lp_norm(f: &impl GridValues, p: Lp, k: f64, m: f64) -> f64 {
    let grid = f.grid();
    let values = f.values();
    let weight_at = |idx: usize| -> f64 {
        if k == 0.0 {
            1.0
        } else {
            bracket_unchecked(&grid.velocity(idx), grid.internal_energy(idx), m).powf(k)
        }
    };
    match p {
        Lp::One => {
            let sum: f64 = values
                .iter()
                .enumerate()
                .map(|(idx, v)| v.abs() * weight_at(idx))
                .sum();
            sum * grid.weight()
        }
        Lp::Two => {
            let sum: f64 = values
                .iter()
                .enumerate()
                .map(|(idx, v)| {
                    let t = v.abs() * weight_at(idx);
                    t * t
                })
                .sum();
            (sum * grid.weight()).sqrt()
        }
        Lp::Infinity => values
            .iter()
            .enumerate()
            .map(|(idx, v)| v.abs() * weight_at(idx))
            .fold(0.0, f64::max),
    }
}

/// Weighted midpoint integral `sum_n w f_n phi(v_n, I_n)`.
pub fn integrate(f: &impl GridValues, phi: impl Fn(&Vec3, f64) -> f64) -> f64 {
    let grid = f.grid();
    let sum: f64 = f
        .values()
        .iter()
        .enumerate()
        .map(|(idx, v)| v * phi(&grid.velocity(idx), grid.internal_energy(idx)))
        .sum();
    sum * grid.weight()
}

/// Partial derivative along velocity axis `axis` (0, 1 or 2): fourth-order central
/// differences in the interior and fourth-order one-sided stencils at the two
/// outermost nodes on each side. Requires `Nv >= 5`.
pub fn derivative_v(grid: &PhaseGrid, values: &[f64], axis: usize) -> Result<Vec<f64>> {
    check_shape(grid, values.len())?;
    if axis > 2 {
        return Err(Error::Domain(format!(
            "velocity axis must be 0, 1 or 2, got {axis}"
        )));
    }
    let nv = grid.nv();
    if nv < 5 {
        return Err(Error::Config(format!(
            "velocity derivatives need Nv >= 5, got {nv}"
        )));
    }
    let ni = grid.ni();
    let stride = match axis {
        0 => nv * nv * ni,
        1 => nv * ni,
        _ => ni,
    };
    let inv = 1.0 / (12.0 * grid.hv());
    let mut out = vec![0.0; values.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = (idx / stride) % nv;
        let at = |offset: isize| values[(idx as isize + offset * stride as isize) as usize];
        let d = if pos == 0 {
            -25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4)
        } else if pos == 1 {
            -3.0 * at(-1) - 10.0 * at(0) + 18.0 * at(1) - 6.0 * at(2) + at(3)
        } else if pos == nv - 2 {
            3.0 * at(1) + 10.0 * at(0) - 18.0 * at(-1) + 6.0 * at(-2) - at(-3)
        } else if pos == nv - 1 {
            25.0 * at(0) - 48.0 * at(-1) + 36.0 * at(-2) - 16.0 * at(-3) + 3.0 * at(-4)
        } else {
            at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)
        };
        *o = d * inv;
    }
    Ok(out)
}

/// Partial derivative in `I`: second-order central differences with second-order
/// one-sided stencils at both ends. Requires `NI >= 5`.
pub fn derivative_i(grid: &PhaseGrid, values: &[f64]) -> Result<Vec<f64>> {
    check_shape(grid, values.len())?;
    let ni = grid.ni();
    if ni < 5 {
        return Err(Error::Config(format!(
            "internal-energy derivatives need NI >= 5, got {ni}"
        )));
    }
    let inv = 1.0 / (2.0 * grid.hi());
    let mut out = vec![0.0; values.len()];
    for (row_out, row) in out.chunks_mut(ni).zip(values.chunks(ni)) {
        row_out[0] = (-3.0 * row[0] + 4.0 * row[1] - row[2]) * inv;
        for l in 1..ni - 1 {
            row_out[l] = (row[l + 1] - row[l - 1]) * inv;
        }
        row_out[ni - 1] = (3.0 * row[ni - 1] - 4.0 * row[ni - 2] + row[ni - 3]) * inv;
    }
    Ok(out)
}

/// `|grad_v f|` at every node.
pub fn gradient_magnitude_v(grid: &PhaseGrid, values: &[f64]) -> Result<Vec<f64>> {
    let d0 = derivative_v(grid, values, 0)?;
    let d1 = derivative_v(grid, values, 1)?;
    let d2 = derivative_v(grid, values, 2)?;
    Ok(d0
        .iter()
        .zip(&d1)
        .zip(&d2)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect())
}

/// Homogeneous Sobolev seminorm `(sum_i ||d_{v_i} f||^2_{L^2})^{1/2}`.
pub fn h1v_norm(f: &impl GridValues) -> Result<f64> {
    let grid = f.grid();
    let mut sum = 0.0;
    for axis in 0..3 {
        let d = derivative_v(grid, f.values(), axis)?;
        sum += d.iter().map(|x| x * x).sum::<f64>();
    }
    Ok((sum * grid.weight()).sqrt())
}

/// `||I^delta d_I f||_{L^2}`.
pub fn weighted_di_norm(f: &impl GridValues, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!(
            "delta must be nonnegative, got {delta}"
        )));
    }
    let grid = f.grid();
    let d = derivative_i(grid, f.values())?;
    let ni = grid.ni();
    let weights: Vec<f64> = grid.i_nodes().iter().map(|i| i.powf(2.0 * delta)).collect();
    let sum: f64 = d
        .iter()
        .enumerate()
        .map(|(idx, x)| x * x * weights[idx % ni])
        .sum();
    Ok((sum * grid.weight()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lv: f64, nv: usize, imax: f64, ni: usize) -> Arc<PhaseGrid> {
        Arc::new(PhaseGrid::new(lv, nv, imax, ni).unwrap())
    }

    #[test]
    fn bracket_examples() {
        assert_eq!(bracket(&Vec3::zeros(), 0.0, 1.0).unwrap(), 1.0);
        let b = bracket(&Vec3::new(2.0, 0.0, 0.0), 0.0, 1.0).unwrap();
        assert!((b - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(bracket(&Vec3::zeros(), 3.0, 1.0).unwrap(), 2.0);
        assert!(bracket(&Vec3::zeros(), -1.0, 1.0).is_err());
        assert!(bracket(&Vec3::zeros(), 1.0, 0.0).is_err());
    }

    #[test]
    fn grid_rejects_bad_dimensions() {
        assert!(PhaseGrid::new(0.0, 8, 1.0, 8).is_err());
        assert!(PhaseGrid::new(1.0, 3, 1.0, 8).is_err());
        assert!(PhaseGrid::new(1.0, 8, 1.0, 3).is_err());
        assert!(PhaseGrid::new(1.0, 8, -1.0, 8).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = PhaseGrid::new(2.0, 5, 3.0, 4).unwrap();
        for idx in 0..g.len() {
            let [i, j, k, l] = g.unravel(idx);
            assert_eq!(g.index(i, j, k, l), idx);
        }
        let idx = g.index(1, 2, 3, 0);
        let v = g.velocity(idx);
        assert_eq!(v[0], g.v_nodes()[1]);
        assert_eq!(v[1], g.v_nodes()[2]);
        assert_eq!(v[2], g.v_nodes()[3]);
    }

    #[test]
    fn weights_sum_to_volume() {
        let g = PhaseGrid::new(3.5, 7, 2.5, 9).unwrap();
        let total = g.weight() * g.len() as f64;
        assert!((total / g.volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_field_l1_norm() {
        let g = grid(2.0, 6, 3.0, 5);
        let f = DistributionField::from_fn(g.clone(), |_, _| 0.7).unwrap();
        let n = lp_norm(&f, Lp::One, 0.0, 1.0);
        assert!((n / (0.7 * g.volume()) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn zero_field_norms() {
        let f = DistributionField::zeros(grid(2.0, 6, 3.0, 5));
        for p in [Lp::One, Lp::Two, Lp::Infinity] {
            for k in [0.0, 1.0, 2.5] {
                assert_eq!(lp_norm(&f, p, k, 1.0), 0.0);
            }
        }
        assert_eq!(h1v_norm(&f).unwrap(), 0.0);
        assert_eq!(weighted_di_norm(&f, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_mass_converges() {
        let exact = std::f64::consts::PI.powf(1.5);
        let mut last_err = f64::INFINITY;
        for n in [8, 16, 32] {
            let g = grid(6.0, n, 12.0, 4 * n);
            let f = DistributionField::from_fn(g, |v, i| (-v.norm_squared() - i).exp()).unwrap();
            let err = (lp_norm(&f, Lp::One, 0.0, 1.0) - exact).abs() / exact;
            assert!(err < last_err);
            last_err = err;
        }
        assert!(last_err < 1e-3, "relative error {last_err}");
    }

    #[test]
    fn rejects_negative_values() {
        let g = grid(1.0, 4, 1.0, 4);
        let mut vals = vec![1.0; g.len()];
        vals[3] = -1e-3;
        assert!(DistributionField::new(g.clone(), vals.clone()).is_err());
        let (f, removed) = DistributionField::floored(g.clone(), vals).unwrap();
        assert_eq!(f.values()[3], 0.0);
        assert!((removed - 1e-3 * g.weight()).abs() < 1e-18);
        assert!(DistributionField::new(g, vec![1.0; 5]).is_err());
    }

    #[test]
    fn derivatives_vanish_on_constants() {
        let g = grid(2.0, 8, 3.0, 6);
        let f = DistributionField::from_fn(g, |_, _| 4.2).unwrap();
        assert!(h1v_norm(&f).unwrap() < 1e-10 * 4.2);
        assert!(weighted_di_norm(&f, 0.3).unwrap() < 1e-10 * 4.2);
    }

    #[test]
    fn derivative_needs_five_nodes() {
        let g = grid(2.0, 4, 3.0, 4);
        let f = DistributionField::from_fn(g, |_, _| 1.0).unwrap();
        assert!(matches!(h1v_norm(&f), Err(Error::Config(_))));
        assert!(matches!(weighted_di_norm(&f, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn stencils_exact_on_polynomials() {
        // Fourth-order stencils differentiate quartics exactly, second-order ones quadratics.
        let g = grid(1.5, 7, 2.0, 6);
        let vals: Vec<f64> = (0..g.len())
            .map(|idx| {
                let v = g.velocity(idx);
                let i = g.internal_energy(idx);
                v[1].powi(4) - 2.0 * v[1] + 3.0 * v[0] * v[2] + i * i - i
            })
            .collect();
        let d1 = derivative_v(&g, &vals, 1).unwrap();
        let di = derivative_i(&g, &vals).unwrap();
        for idx in 0..g.len() {
            let v = g.velocity(idx);
            let i = g.internal_energy(idx);
            assert!((d1[idx] - (4.0 * v[1].powi(3) - 2.0)).abs() < 1e-10);
            assert!((di[idx] - (2.0 * i - 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn sine_derivative_second_order() {
        let lv = 2.0;
        let errors: Vec<f64> = [12usize, 24]
            .iter()
            .map(|&n| {
                let g = grid(lv, n, 4.0, 6);
                let k = std::f64::consts::PI / lv;
                let f = DistributionField::from_fn(g.clone(), |v, i| {
                    ((k * v[0]).sin() + 1.0) * (-i).exp()
                })
                .unwrap();
                let d = derivative_v(&g, f.values(), 0).unwrap();
                let mut err: f64 = 0.0;
                let mut scale: f64 = 0.0;
                for idx in 0..g.len() {
                    let v = g.velocity(idx);
                    let exact = k * (k * v[0]).cos() * (-g.internal_energy(idx)).exp();
                    err = err.max((d[idx] - exact).abs());
                    scale = scale.max(exact.abs());
                }
                err / scale
            })
            .collect();
        // Refinement by two must cut the error at least by the second-order factor.
        assert!(errors[1] < errors[0] / 3.5, "{errors:?}");
    }

    #[test]
    fn di_norm_matches_l2_for_exponential() {
        let g = grid(5.0, 24, 30.0, 240);
        let f =
            DistributionField::from_fn(g, |v, i| (-v.norm_squared()).exp() * (-i).exp()).unwrap();
        let a = weighted_di_norm(&f, 0.0).unwrap();
        let b = lp_norm(&f, Lp::Two, 0.0, 1.0);
        assert!((a / b - 1.0).abs() < 1e-2, "{a} vs {b}");
    }

    #[test]
    fn di_norm_delta_one_linear_in_i() {
        // f = exp(-|v|^2) I: integrand I^2 exp(-2|v|^2), integral (pi/2)^{3/2} Imax^3/3.
        let imax = 2.0;
        let g = grid(5.0, 24, imax, 40);
        let f = DistributionField::from_fn(g, |v, i| (-v.norm_squared()).exp() * i).unwrap();
        let exact = ((std::f64::consts::FRAC_PI_2).powf(1.5) * imax.powi(3) / 3.0).sqrt();
        let got = weighted_di_norm(&f, 1.0).unwrap();
        assert!((got / exact - 1.0).abs() < 1e-3, "{got} vs {exact}");
    }

    #[test]
    fn model_params_defaults() {
        let p = ModelParams::new(1.0, 0.2, 1.0).unwrap();
        assert!((p.delta - 0.3).abs() < 1e-15);
        assert_eq!(p.eps_plus, 0.01);
        assert_eq!(ModelParams::new(1.0, 0.7, 1.0).unwrap().delta, 0.0);
        assert!(ModelParams::new(0.0, 0.5, 1.0).is_err());
        assert!(ModelParams::new(1.0, -1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 0.5, 2.5).is_err());
    }
}
