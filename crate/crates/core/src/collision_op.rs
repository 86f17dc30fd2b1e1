//! Collision frequency, gain and loss operators, weak forms and the averaging
//! operator.
//!
//! Integrals over the partner state `(v*, I*)` use the grid's midpoint rule:
//! the partner always sits on a node. The collision frequency sums that rule
//! exactly, while the gain operator samples partner nodes, `sigma`, `r` and `R`
//! by Monte Carlo (or a tensor rule for small problems). Because both operators
//! share the same partner quadrature, the discrete gain and loss balance on
//! polyatomic Maxwellians up to sampling noise.

use std::f64::consts::PI;
use std::sync::Arc;

use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{axis_flips, collision_axis, d_alpha_norm, kappa, AngularKernel, PsiWeight};
use crate::kinematics::{orthonormal_basis, total_energy, transform, BlParams, CollisionState};
use crate::pair_sum::{pair_sum, pair_sum_with_velocity};
use crate::phase_space::{DistributionField, GridValues, ModelParams, PhaseGrid, ScalarField};
use crate::quadrature::{gauss_legendre, sin_squared_rule};
use crate::reconstruction::Reconstruction;
use crate::rng::{CounterRng, Stream};
use crate::Vec3;

/// Share of partner draws taken uniformly over the grid rather than from `g`.
const DEFENSIVE_MIX: f64 = 0.1;

/// Test function `chi(v, I)`.
pub type TestFn<'a> = &'a (dyn Fn(&Vec3, f64) -> f64 + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMode {
    MonteCarlo,
    TensorDeterministic,
}

/// How the inner integrals of the collision operator are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub mode: QuadratureMode,
    /// Monte Carlo samples per output node.
    pub mc_samples: usize,
    /// Gauss points in `cos(theta)`; the azimuth uses twice as many uniform points.
    pub sphere_order: usize,
    pub r_nodes: usize,
    pub big_r_nodes: usize,
    pub seed: u64,
    /// Largest number of inner evaluations per output node allowed in tensor mode.
    pub budget: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            mode: QuadratureMode::MonteCarlo,
            mc_samples: 2000,
            sphere_order: 6,
            r_nodes: 8,
            big_r_nodes: 8,
            seed: 0,
            budget: 2_000_000,
        }
    }
}

impl QuadratureSpec {
    pub fn monte_carlo(mc_samples: usize, seed: u64) -> Self {
        Self {
            mc_samples,
            seed,
            ..Self::default()
        }
    }

    pub fn tensor(sphere_order: usize, r_nodes: usize, big_r_nodes: usize) -> Self {
        Self {
            mode: QuadratureMode::TensorDeterministic,
            sphere_order,
            r_nodes,
            big_r_nodes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 2 {
            return Err(Error::Config(format!(
                "mc_samples must be at least 2, got {}",
                self.mc_samples
            )));
        }
        if self.sphere_order == 0 || self.r_nodes == 0 || self.big_r_nodes == 0 {
            return Err(Error::Config(
                "deterministic node counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Inner points per partner node in tensor mode.
    fn angular_points(&self) -> usize {
        2 * self.sphere_order * self.sphere_order * self.r_nodes * self.big_r_nodes
    }

    fn check_budget(&self, partners: usize) -> Result<()> {
        let total = self.angular_points().saturating_mul(partners);
        if total > self.budget {
            return Err(Error::Config(format!(
                "tensor quadrature needs {total} inner evaluations per node, budget is {}",
                self.budget
            )));
        }
        Ok(())
    }
}

/// `nu[g]` sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionFrequencyField {
    grid: Arc<PhaseGrid>,
    values: Vec<f64>,
}

impl CollisionFrequencyField {
    pub fn new(grid: Arc<PhaseGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(
                "collision frequency must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

impl GridValues for CollisionFrequencyField {
    fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Monte Carlo or quadrature estimate of a field, with per-node standard errors.
#[derive(Debug, Clone)]
pub struct FieldEstimate<F> {
    pub field: F,
    /// Standard error of each node value (zero in tensor mode).
    pub std_err: Vec<f64>,
    /// Samples per node actually drawn.
    pub samples: usize,
    /// Samples discarded at integrable singularities, summed over nodes.
    pub rejected: u64,
}

impl<F> FieldEstimate<F> {
    /// Rejected share of all samples.
    pub fn rejection_rate(&self) -> f64 {
        let total = (self.samples * self.std_err.len()) as f64;
        if total == 0.0 {
            0.0
        } else {
            self.rejected as f64 / total
        }
    }

    /// Standard error of the midpoint integral of the field.
    pub fn integral_std_err(&self, weight: f64) -> f64 {
        weight * self.std_err.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Scalar estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

fn check_nonnegative(f: &DistributionField, name: &str) -> Result<()> {
    if let Some((n, v)) = f.values().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain(format!(
            "{name} must be nonnegative, node {n} holds {v}"
        )));
    }
    Ok(())
}

fn check_same_grid(a: &PhaseGrid, b: &PhaseGrid) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// `nu[g](v, I) = kappa int g(v*, I*) (E/m)^{gamma/2} dv* dI*` on every node.
///
/// The angular and energy-exchange integrals factor out exactly into `kappa`, so
/// only the partner integral is evaluated, by the grid's midpoint rule. For
/// `gamma = 0` the result is the constant `kappa ||g||_1`.
pub fn collision_frequency(
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
) -> Result<CollisionFrequencyField> {
    params.validate()?;
    check_nonnegative(g, "g")?;
    let grid = g.grid();
    let k = kappa(b, params.alpha)?;
    let w = grid.weight();
    let values = if params.gamma == 0.0 {
        let mass: f64 = g.values().iter().sum::<f64>() * w;
        vec![k * mass; grid.len()]
    } else {
        let half = 0.5 * params.gamma;
        pair_sum(grid, params.m, g.values(), |x| x.powf(half))
            .into_iter()
            .map(|s| k * w * s)
            .collect()
    };
    CollisionFrequencyField::new(g.grid_arc().clone(), values)
}

/// `nu[g]` at an arbitrary point, by direct summation over the partner nodes.
pub fn collision_frequency_at(
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
    v: &Vec3,
    i: f64,
) -> Result<f64> {
    if !(i >= 0.0) {
        return Err(Error::Domain(format!(
            "internal energy must be nonnegative, got {i}"
        )));
    }
    let grid = g.grid();
    let k = kappa(b, params.alpha)?;
    let half = 0.5 * params.gamma;
    let sum: f64 = g
        .values()
        .iter()
        .enumerate()
        .map(|(n, gv)| {
            let u = v - grid.velocity(n);
            let e = 0.25 * params.m * u.norm_squared() + i + grid.internal_energy(n);
            gv * (e / params.m).powf(half)
        })
        .sum();
    Ok(k * grid.weight() * sum)
}

/// Velocity and internal-energy derivatives of `nu[g]`.
#[derive(Debug, Clone)]
pub struct NuDerivatives {
    pub dv: [ScalarField; 3],
    pub di: ScalarField,
}

/// `d_{v_i} nu = (gamma kappa / 4) int g (E/m)^{gamma/2 - 1} (v_i - v*_i)` and
/// `d_I nu = (gamma kappa / (2m)) int g (E/m)^{gamma/2 - 1}`.
///
/// Partner nodes never coincide with `E = 0` on the cell-centred grid, so no
/// sample is rejected.
pub fn nu_derivatives(
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
) -> Result<NuDerivatives> {
    params.validate()?;
    check_nonnegative(g, "g")?;
    let grid = g.grid();
    let arc = g.grid_arc();
    if params.gamma == 0.0 {
        let zero = || ScalarField::new(arc.clone(), vec![0.0; grid.len()]);
        return Ok(NuDerivatives {
            dv: [zero()?, zero()?, zero()?],
            di: zero()?,
        });
    }
    let k = kappa(b, params.alpha)?;
    let w = grid.weight();
    let exponent = 0.5 * params.gamma - 1.0;
    let (sum, vel) = pair_sum_with_velocity(grid, params.m, g.values(), |x| x.powf(exponent));
    let cv = params.gamma * k * w / 4.0;
    let ci = params.gamma * k * w / (2.0 * params.m);
    let [v0, v1, v2] = vel;
    let scale =
        |v: Vec<f64>, c: f64| ScalarField::new(arc.clone(), v.into_iter().map(|x| c * x).collect());
    Ok(NuDerivatives {
        dv: [scale(v0, cv)?, scale(v1, cv)?, scale(v2, cv)?],
        di: scale(sum, ci)?,
    })
}

pub fn nu_gradient_v(
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
) -> Result<[ScalarField; 3]> {
    Ok(nu_derivatives(g, params, b)?.dv)
}

pub fn nu_di(
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
) -> Result<ScalarField> {
    Ok(nu_derivatives(g, params, b)?.di)
}

/// Pointwise loss term `f nu`.
pub fn loss(f: &DistributionField, nu: &CollisionFrequencyField) -> Result<DistributionField> {
    check_same_grid(f.grid(), nu.grid())?;
    DistributionField::new(
        f.grid_arc().clone(),
        f.values()
            .iter()
            .zip(nu.values())
            .map(|(a, b)| a * b)
            .collect(),
    )
}

/// `x^(gamma/2)` with the common exponents evaluated without `powf`.
#[inline]
fn hard_potential(x: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else if gamma == 1.0 {
        x.sqrt()
    } else if gamma == 2.0 {
        x
    } else {
        x.powf(0.5 * gamma)
    }
}

/// Geometry of one sampled collision ending in the output node.
struct Sample {
    /// Pre-collisional pair `(v, I), (v*, I*)`.
    pre: CollisionState,
    /// Post-collisional pair `(v', I'), (v'*, I'*)`.
    post: CollisionState,
    e: f64,
    big_r: f64,
    u_norm: f64,
}

/// Shared sampling machinery for integrals of the gain type.
struct GainSampler<'a> {
    grid: &'a PhaseGrid,
    params: ModelParams,
    b: &'a AngularKernel,
    f_rec: Reconstruction,
    g_rec: Reconstruction,
    alias: WeightedAliasIndex<f64>,
    /// `w / p_n` for the partner proposal.
    inv_prob: Vec<f64>,
    i_pow: Vec<f64>,
    beta_r: Beta<f64>,
    beta_big_r: Beta<f64>,
    /// `2 pi ||d_alpha||_1`, the normalisation of the sampled measure.
    measure: f64,
}

impl<'a> GainSampler<'a> {
    fn new(
        f: &DistributionField,
        g: &'a DistributionField,
        params: &ModelParams,
        b: &'a AngularKernel,
    ) -> Result<Self> {
        let grid = g.grid();
        let n = grid.len();
        let w = grid.weight();
        let mass: f64 = g.values().iter().sum();
        let probs: Vec<f64> = if mass > 0.0 {
            g.values()
                .iter()
                .map(|gv| (1.0 - DEFENSIVE_MIX) * gv / mass + DEFENSIVE_MIX / n as f64)
                .collect()
        } else {
            vec![1.0 / n as f64; n]
        };
        let alias = WeightedAliasIndex::new(probs.clone())
            .map_err(|e| Error::Degenerate(format!("partner proposal: {e}")))?;
        let beta_r = Beta::new(params.alpha + 1.0, params.alpha + 1.0)
            .map_err(|e| Error::Domain(format!("r distribution: {e}")))?;
        let beta_big_r = Beta::new(1.5, 2.0 * params.alpha + 2.0)
            .map_err(|e| Error::Domain(format!("R distribution: {e}")))?;
        Ok(Self {
            grid,
            params: *params,
            b,
            f_rec: Reconstruction::new(f, params.alpha),
            g_rec: Reconstruction::new(g, params.alpha),
            alias,
            inv_prob: probs.iter().map(|p| w / p).collect(),
            i_pow: grid
                .i_nodes()
                .iter()
                .map(|i| i.powf(params.alpha))
                .collect(),
            beta_r,
            beta_big_r,
            measure: 2.0 * PI * d_alpha_norm(params.alpha)?,
        })
    }

    /// Draws one collision landing in `out`; returns the sample and the weight of
    /// the plain gain integrand.
    #[inline]
    fn draw(&self, out: usize, rng: &mut CounterRng) -> (Sample, f64) {
        let grid = self.grid;
        let partner = self.alias.sample(rng);
        let v = grid.velocity(out);
        let i = grid.internal_energy(out);
        let v_star = grid.velocity(partner);
        let i_star = grid.internal_energy(partner);
        let u = v - v_star;
        let u_norm = u.norm();
        let u_hat = collision_axis(&u, u_norm == 0.0 && rng.uniform() < 0.5);
        let z = rng.uniform();
        let phi = 2.0 * PI * rng.uniform();
        let (e1, e2) = orthonormal_basis(&u_hat);
        let st = (1.0 - z * z).max(0.0).sqrt();
        let sigma = z * u_hat + {
            let (sin, cos) = phi.sin_cos();
            st * (cos * e1 + sin * e2)
        };
        let r: f64 = self.beta_r.sample(rng);
        let big_r: f64 = self.beta_big_r.sample(rng);
        let pre = CollisionState {
            v,
            i,
            v_star,
            i_star,
        };
        let post = transform(&pre, &BlParams { sigma, r, big_r }, self.params.m);
        let e = total_energy(&pre, self.params.m);
        let ni = grid.ni();
        let weight = self.measure
            * self.b.eval(z)
            * hard_potential(e / self.params.m, self.params.gamma)
            * self.inv_prob[partner]
            * self.i_pow[out % ni]
            * self.i_pow[partner % ni];
        (
            Sample {
                pre,
                post,
                e,
                big_r,
                u_norm,
            },
            weight,
        )
    }

    #[inline]
    fn product_at_post(&self, s: &Sample) -> Option<f64> {
        if self.params.alpha < 0.0 && (s.post.i == 0.0 || s.post.i_star == 0.0) {
            return None;
        }
        let hf = self.f_rec.ratio_at(&s.post.v, s.post.i);
        if hf == 0.0 {
            return Some(0.0);
        }
        Some(hf * self.g_rec.ratio_at(&s.post.v_star, s.post.i_star))
    }

    /// Mean, standard error and rejections of `extra(sample) * weight` at node `out`.
    fn node_estimate(
        &self,
        out: usize,
        samples: usize,
        seed: u64,
        stream: u64,
        extra: &(impl Fn(&Sample) -> Option<f64> + Sync),
    ) -> (f64, f64, u64) {
        let mut mean = 0.0;
        let mut m2 = 0.0;
        let mut rejected = 0u64;
        for k in 0..samples {
            let mut rng = CounterRng::new(seed, stream, out as u64, k as u64);
            let (s, w) = self.draw(out, &mut rng);
            let x = if w == 0.0 {
                0.0
            } else {
                match self.product_at_post(&s).and_then(|p| {
                    if p == 0.0 {
                        Some(0.0)
                    } else {
                        extra(&s).map(|e| p * e * w)
                    }
                }) {
                    Some(x) => x,
                    None => {
                        rejected += 1;
                        0.0
                    }
                }
            };
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        let var = if samples > 1 {
            m2 / (samples - 1) as f64
        } else {
            0.0
        };
        (mean, (var / samples as f64).sqrt(), rejected)
    }
}

fn run_nodes(
    grid: &PhaseGrid,
    node: impl Fn(usize) -> (f64, f64, u64) + Sync + Send,
) -> (Vec<f64>, Vec<f64>, u64) {
    let results: Vec<(f64, f64, u64)> = (0..grid.len()).into_par_iter().map(node).collect();
    let mut values = Vec::with_capacity(results.len());
    let mut errs = Vec::with_capacity(results.len());
    let mut rejected = 0;
    for (v, e, r) in results {
        values.push(v);
        errs.push(e);
        rejected += r;
    }
    (values, errs, rejected)
}

/// Gain operator `Q+(f, g)` on every node.
///
/// Monte Carlo mode draws the partner node from `g` (mixed with a uniform
/// proposal), `sigma` uniformly on the hemisphere around `u_hat`, and `(r, R)`
/// from the normalised `d_alpha` density. Off-grid values of `f / I^alpha` and
/// `g / I^alpha` come from an envelope-corrected multilinear reconstruction that
/// vanishes outside the box.
pub fn gain(
    f: &DistributionField,
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<FieldEstimate<DistributionField>> {
    params.validate()?;
    quad.validate()?;
    b.validate()?;
    check_same_grid(f.grid(), g.grid())?;
    check_nonnegative(f, "f")?;
    check_nonnegative(g, "g")?;
    let grid = f.grid();
    let arc = f.grid_arc().clone();
    if f.values().iter().all(|v| *v == 0.0) || g.values().iter().all(|v| *v == 0.0) {
        return Ok(FieldEstimate {
            field: DistributionField::zeros(arc),
            std_err: vec![0.0; grid.len()],
            samples: 0,
            rejected: 0,
        });
    }
    match quad.mode {
        QuadratureMode::MonteCarlo => {
            let sampler = GainSampler::new(f, g, params, b)?;
            let (values, std_err, rejected) = run_nodes(grid, |out| {
                sampler.node_estimate(
                    out,
                    quad.mc_samples,
                    quad.seed,
                    Stream::Gain as u64,
                    &|_| Some(1.0),
                )
            });
            Ok(FieldEstimate {
                field: DistributionField::new(arc, values)?,
                std_err,
                samples: quad.mc_samples,
                rejected,
            })
        }
        QuadratureMode::TensorDeterministic => {
            quad.check_budget(grid.len())?;
            let values = gain_tensor(f, g, params, b, quad)?;
            Ok(FieldEstimate {
                field: DistributionField::new(arc, values)?,
                std_err: vec![0.0; grid.len()],
                samples: quad.angular_points() * grid.len(),
                rejected: 0,
            })
        }
    }
}

/// Tensor rule over `(sigma, r, R)`: Gauss in `cos(theta)` times uniform azimuth on
/// the hemisphere, Gauss–Legendre after `x = sin^2` in `r` and `R`, with the
/// `d_alpha` density folded into the weights.
struct AngularRule {
    sphere: Vec<(f64, f64, f64)>,
    r: Vec<(f64, f64)>,
    big_r: Vec<(f64, f64)>,
}

impl AngularRule {
    fn new(quad: &QuadratureSpec, alpha: f64) -> Self {
        let (zs, zw) = gauss_legendre(quad.sphere_order, 0.0, 1.0);
        let n_phi = 2 * quad.sphere_order;
        let mut sphere = Vec::with_capacity(zs.len() * n_phi);
        for (z, w) in zs.iter().zip(&zw) {
            for k in 0..n_phi {
                let phi = 2.0 * PI * (k as f64 + 0.5) / n_phi as f64;
                sphere.push((*z, phi, w * 2.0 * PI / n_phi as f64));
            }
        }
        let r = sin_squared_rule(quad.r_nodes)
            .into_iter()
            .map(|(x, xc, w)| (x, w * (x * xc).powf(alpha)))
            .collect();
        let big_r = sin_squared_rule(quad.big_r_nodes)
            .into_iter()
            .map(|(x, xc, w)| (x, w * xc.powf(2.0 * alpha + 1.0) * x.sqrt()))
            .collect();
        Self { sphere, r, big_r }
    }
}

fn gain_tensor(
    f: &DistributionField,
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let grid = f.grid();
    let f_rec = Reconstruction::new(f, params.alpha);
    let g_rec = Reconstruction::new(g, params.alpha);
    let rule = AngularRule::new(quad, params.alpha);
    let w = grid.weight();
    let ni = grid.ni();
    let i_pow: Vec<f64> = grid
        .i_nodes()
        .iter()
        .map(|i| i.powf(params.alpha))
        .collect();
    let (values, _, _) = run_nodes(grid, |out| {
        let v = grid.velocity(out);
        let i = grid.internal_energy(out);
        let mut total = 0.0;
        for partner in 0..grid.len() {
            let v_star = grid.velocity(partner);
            let i_star = grid.internal_energy(partner);
            let pre = CollisionState {
                v,
                i,
                v_star,
                i_star,
            };
            let e = total_energy(&pre, params.m);
            let u = v - v_star;
            let flips = axis_flips(&u);
            let mut acc = 0.0;
            for &flip in flips {
                let u_hat = collision_axis(&u, flip);
                let (e1, e2) = orthonormal_basis(&u_hat);
                for &(z, phi, wz) in &rule.sphere {
                    let bz = b.eval(z);
                    if bz == 0.0 {
                        continue;
                    }
                    let st = (1.0 - z * z).max(0.0).sqrt();
                    let sigma = z * u_hat + {
                        let (sin, cos) = phi.sin_cos();
                        st * (cos * e1 + sin * e2)
                    };
                    for &(r, wr) in &rule.r {
                        for &(big_r, wbr) in &rule.big_r {
                            let post = transform(&pre, &BlParams { sigma, r, big_r }, params.m);
                            let hf = f_rec.ratio_at(&post.v, post.i);
                            if hf == 0.0 {
                                continue;
                            }
                            acc += wz * bz * wr * wbr * hf * g_rec.ratio_at(&post.v_star, post.i_star);
                        }
                    }
                }
            }
            total += acc / flips.len() as f64
                * w
                * hard_potential(e / params.m, params.gamma)
                * i_pow[out % ni]
                * i_pow[partner % ni];
        }
        (total, 0.0, 0)
    });
    Ok(values)
}

/// Full collision operator `Q(f, f) = Q+(f, f) - f nu[f]`.
#[derive(Debug, Clone)]
pub struct QTotal {
    pub values: ScalarField,
    /// Standard error of each node (inherited from the gain estimate).
    pub std_err: Vec<f64>,
    pub gain: FieldEstimate<DistributionField>,
    pub nu: CollisionFrequencyField,
}

pub fn q_total(
    f: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<QTotal> {
    let gain = gain(f, f, params, b, quad)?;
    let nu = collision_frequency(f, params, b)?;
    let values: Vec<f64> = gain
        .field
        .values()
        .iter()
        .zip(f.values())
        .zip(nu.values())
        .map(|((q, fv), n)| q - fv * n)
        .collect();
    Ok(QTotal {
        values: ScalarField::new(f.grid_arc().clone(), values)?,
        std_err: gain.std_err.clone(),
        gain,
        nu,
    })
}

/// Weak form `int int f g B d_alpha (chi(v', I') - chi(v, I))` over all variables.
///
/// Pairs of nodes are drawn with probabilities proportional to `f` and `g`, the
/// collision parameters as in [`gain`]. The total number of samples is
/// `mc_samples` times the number of grid nodes.
pub fn weak_form_moment(
    f: &DistributionField,
    g: &DistributionField,
    chi: TestFn<'_>,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<Estimate> {
    params.validate()?;
    quad.validate()?;
    check_same_grid(f.grid(), g.grid())?;
    check_nonnegative(f, "f")?;
    check_nonnegative(g, "g")?;
    let grid = f.grid();
    let w = grid.weight();
    let mass_f: f64 = f.values().iter().sum::<f64>() * w;
    let mass_g: f64 = g.values().iter().sum::<f64>() * w;
    if mass_f == 0.0 || mass_g == 0.0 {
        return Ok(Estimate {
            value: 0.0,
            std_err: 0.0,
        });
    }
    let alias_f = WeightedAliasIndex::new(f.values().to_vec())
        .map_err(|e| Error::Degenerate(format!("f proposal: {e}")))?;
    let alias_g = WeightedAliasIndex::new(g.values().to_vec())
        .map_err(|e| Error::Degenerate(format!("g proposal: {e}")))?;
    let beta_r = Beta::new(params.alpha + 1.0, params.alpha + 1.0)
        .map_err(|e| Error::Domain(format!("r distribution: {e}")))?;
    let beta_big_r = Beta::new(1.5, 2.0 * params.alpha + 2.0)
        .map_err(|e| Error::Domain(format!("R distribution: {e}")))?;
    let scale = mass_f * mass_g * 2.0 * PI * d_alpha_norm(params.alpha)?;
    let chunks = grid.len();
    let per_chunk = quad.mc_samples;
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for k in 0..per_chunk {
                let mut rng =
                    CounterRng::new(quad.seed, Stream::WeakForm as u64, chunk as u64, k as u64);
                let n1 = alias_f.sample(&mut rng);
                let n2 = alias_g.sample(&mut rng);
                let pre = CollisionState {
                    v: grid.velocity(n1),
                    i: grid.internal_energy(n1),
                    v_star: grid.velocity(n2),
                    i_star: grid.internal_energy(n2),
                };
                let u = pre.relative_velocity();
                let u_hat = collision_axis(&u, u == Vec3::zeros() && rng.uniform() < 0.5);
                let z = rng.uniform();
                let phi = 2.0 * PI * rng.uniform();
                let (e1, e2) = orthonormal_basis(&u_hat);
                let st = (1.0 - z * z).max(0.0).sqrt();
                let sigma = z * u_hat + {
                    let (sin, cos) = phi.sin_cos();
                    st * (cos * e1 + sin * e2)
                };
                let r: f64 = beta_r.sample(&mut rng);
                let big_r: f64 = beta_big_r.sample(&mut rng);
                let post = transform(&pre, &BlParams { sigma, r, big_r }, params.m);
                let e = total_energy(&pre, params.m);
                let x = scale
                    * b.eval(z)
                    * hard_potential(e / params.m, params.gamma)
                    * (chi(&post.v, post.i) - chi(&pre.v, pre.i));
                s += x;
                s2 += x * x;
            }
            (s, s2)
        })
        .collect();
    let total = (chunks * per_chunk) as f64;
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let mean = s / total;
    let var = ((s2 / total - mean * mean) * total / (total - 1.0)).max(0.0);
    Ok(Estimate {
        value: mean,
        std_err: (var / total).sqrt(),
    })
}

/// Averaging operator `S^psi(chi)(v, I; v*, I*)` on every grid node `(v, I)` for the
/// fixed partner state in `partner` (its `v_star`, `i_star` fields are used).
pub fn averaging_s(
    chi: TestFn<'_>,
    psi: PsiWeight,
    partner: &CollisionState,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &QuadratureSpec,
    grid: &Arc<PhaseGrid>,
) -> Result<FieldEstimate<ScalarField>> {
    params.validate()?;
    quad.validate()?;
    b.validate()?;
    psi.check_finite(params.alpha, params.delta)?;
    let alpha = params.alpha;
    let delta = params.delta;
    let m = params.m;
    let v_star = partner.v_star;
    let i_star = partner.i_star;
    match quad.mode {
        QuadratureMode::TensorDeterministic => {
            quad.check_budget(1)?;
            let rule = AngularRule::new(quad, alpha);
            let (values, _, _) = run_nodes(grid, |out| {
                let pre = CollisionState {
                    v: grid.velocity(out),
                    i: grid.internal_energy(out),
                    v_star,
                    i_star,
                };
                let u = pre.relative_velocity();
                let flips = axis_flips(&u);
                let mut acc = 0.0;
                for &flip in flips {
                    let u_hat = collision_axis(&u, flip);
                    let (e1, e2) = orthonormal_basis(&u_hat);
                    for &(z, phi, wz) in &rule.sphere {
                        let bz = b.eval(z);
                        let st = (1.0 - z * z).max(0.0).sqrt();
                        let sigma = z * u_hat + {
                            let (sin, cos) = phi.sin_cos();
                            st * (cos * e1 + sin * e2)
                        };
                        for &(r, wr) in &rule.r {
                            for &(big_r, wbr) in &rule.big_r {
                                let post = transform(&pre, &BlParams { sigma, r, big_r }, m);
                                acc += wz
                                    * bz
                                    * wr
                                    * wbr
                                    * psi.eval(r, big_r, alpha, delta)
                                    * chi(&post.v, post.i);
                            }
                        }
                    }
                }
                (acc / flips.len() as f64, 0.0, 0)
            });
            Ok(FieldEstimate {
                field: ScalarField::new(grid.clone(), values)?,
                std_err: vec![0.0; grid.len()],
                samples: quad.angular_points(),
                rejected: 0,
            })
        }
        QuadratureMode::MonteCarlo => {
            let beta_r = Beta::new(alpha + 1.0, alpha + 1.0)
                .map_err(|e| Error::Domain(format!("r distribution: {e}")))?;
            let beta_big_r = Beta::new(1.5, 2.0 * alpha + 2.0)
                .map_err(|e| Error::Domain(format!("R distribution: {e}")))?;
            let measure = 2.0 * PI * d_alpha_norm(alpha)?;
            let n = quad.mc_samples;
            let (values, std_err, _) = run_nodes(grid, |out| {
                let pre = CollisionState {
                    v: grid.velocity(out),
                    i: grid.internal_energy(out),
                    v_star,
                    i_star,
                };
                let u = pre.relative_velocity();
                let degenerate = u == Vec3::zeros();
                let axes = [false, true].map(|flip| {
                    let u_hat = collision_axis(&u, flip);
                    (u_hat, orthonormal_basis(&u_hat))
                });
                let mut s = 0.0;
                let mut s2 = 0.0;
                for k in 0..n {
                    let mut rng =
                        CounterRng::new(quad.seed, Stream::Averaging as u64, out as u64, k as u64);
                    let (u_hat, (e1, e2)) = axes[usize::from(degenerate && rng.uniform() < 0.5)];
                    let z = rng.uniform();
                    let phi = 2.0 * PI * rng.uniform();
                    let st = (1.0 - z * z).max(0.0).sqrt();
                    let sigma = z * u_hat + {
                        let (sin, cos) = phi.sin_cos();
                        st * (cos * e1 + sin * e2)
                    };
                    let r: f64 = beta_r.sample(&mut rng);
                    let big_r: f64 = beta_big_r.sample(&mut rng);
                    let post = transform(&pre, &BlParams { sigma, r, big_r }, m);
                    let x = measure
                        * b.eval(z)
                        * psi.eval(r, big_r, alpha, delta)
                        * chi(&post.v, post.i);
                    s += x;
                    s2 += x * x;
                }
                let mean = s / n as f64;
                let var = ((s2 / n as f64 - mean * mean) * n as f64 / (n - 1) as f64).max(0.0);
                (mean, (var / n as f64).sqrt(), 0)
            });
            Ok(FieldEstimate {
                field: ScalarField::new(grid.clone(), values)?,
                std_err,
                samples: n,
                rejected: 0,
            })
        }
    }
}

/// Remainder term of the velocity commutator of the gain operator along `axis`:
/// the gain integrand multiplied by
/// `beta_i = (2 w_i / |w|^2) (alpha (R E - m|u|^2/4) / I* + 3/2 - (2 alpha + 5/2 - gamma/2) R)`
/// with `w = v - v'*`.
///
/// Samples with `|w| < 1e-12 Lv` or `I* < 1e-12 Imax` are rejected and counted.
pub fn gain_remainder(
    f: &DistributionField,
    g: &DistributionField,
    axis: usize,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<FieldEstimate<ScalarField>> {
    params.validate()?;
    quad.validate()?;
    b.validate()?;
    if !(params.alpha > 0.0) {
        return Err(Error::Domain(format!(
            "gain remainder requires alpha > 0, got {}",
            params.alpha
        )));
    }
    if axis > 2 {
        return Err(Error::Domain(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    check_same_grid(f.grid(), g.grid())?;
    check_nonnegative(f, "f")?;
    check_nonnegative(g, "g")?;
    let grid = f.grid();
    let arc = f.grid_arc().clone();
    if f.values().iter().all(|v| *v == 0.0) || g.values().iter().all(|v| *v == 0.0) {
        return Ok(FieldEstimate {
            field: ScalarField::new(arc, vec![0.0; grid.len()])?,
            std_err: vec![0.0; grid.len()],
            samples: 0,
            rejected: 0,
        });
    }
    let sampler = GainSampler::new(f, g, params, b)?;
    let alpha = params.alpha;
    let m = params.m;
    let coeff_r = 2.0 * alpha + 2.5 - 0.5 * params.gamma;
    let w_floor = 1e-12 * grid.lv();
    let i_floor = 1e-12 * grid.imax();
    let beta = move |s: &Sample| -> Option<f64> {
        let w = s.pre.v - s.post.v_star;
        let w2 = w.norm_squared();
        if w2.sqrt() < w_floor || s.pre.i_star < i_floor {
            return None;
        }
        let bracket = alpha * (s.big_r * s.e - 0.25 * m * s.u_norm * s.u_norm) / s.pre.i_star + 1.5
            - coeff_r * s.big_r;
        Some(2.0 * w[axis] / w2 * bracket)
    };
    let stream = Stream::Remainder as u64 + 16 * axis as u64;
    let (values, std_err, rejected) = run_nodes(grid, |out| {
        sampler.node_estimate(out, quad.mc_samples, quad.seed, stream, &beta)
    });
    Ok(FieldEstimate {
        field: ScalarField::new(arc, values)?,
        std_err,
        samples: quad.mc_samples,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Arc<PhaseGrid>, ModelParams, AngularKernel) {
        let grid = Arc::new(PhaseGrid::new(4.0, 6, 10.0, 6).unwrap());
        let params = ModelParams::new(1.0, 0.5, 1.0).unwrap();
        (grid, params, AngularKernel::unit())
    }

    fn maxwellian(grid: &Arc<PhaseGrid>, alpha: f64) -> DistributionField {
        DistributionField::from_fn(grid.clone(), |v, i| {
            i.powf(alpha) * (-(0.5 * v.norm_squared() + i)).exp()
        })
        .unwrap()
    }

    #[test]
    fn zero_inputs_give_zero() {
        let (grid, params, b) = setup();
        let z = DistributionField::zeros(grid.clone());
        let f = maxwellian(&grid, params.alpha);
        let quad = QuadratureSpec::monte_carlo(10, 1);
        let q = gain(&z, &f, &params, &b, &quad).unwrap();
        assert!(q.field.values().iter().all(|v| *v == 0.0));
        let nu = collision_frequency(&z, &params, &b).unwrap();
        assert!(nu.values().iter().all(|v| *v == 0.0));
        let rem = gain_remainder(&f, &z, 0, &params, &b, &quad).unwrap();
        assert!(rem.field.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn negative_input_rejected() {
        let (grid, params, b) = setup();
        let f = maxwellian(&grid, params.alpha);
        assert!(gain_remainder(
            &f,
            &f,
            0,
            &ModelParams::new(1.0, 0.0, 1.0).unwrap(),
            &b,
            &QuadratureSpec::default()
        )
        .is_err());
        let other = Arc::new(PhaseGrid::new(4.0, 5, 10.0, 6).unwrap());
        let g = maxwellian(&other, params.alpha);
        assert!(gain(&f, &g, &params, &b, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn loss_is_pointwise() {
        let (grid, params, b) = setup();
        let f = maxwellian(&grid, params.alpha);
        let nu = collision_frequency(&f, &params, &b).unwrap();
        let l = loss(&f, &nu).unwrap();
        for n in 0..grid.len() {
            assert_eq!(l.values()[n], f.values()[n] * nu.values()[n]);
        }
    }

    #[test]
    fn gain_is_deterministic_in_seed() {
        let (grid, params, b) = setup();
        let f = maxwellian(&grid, params.alpha);
        let quad = QuadratureSpec::monte_carlo(50, 9);
        let a = gain(&f, &f, &params, &b, &quad).unwrap();
        let c = gain(&f, &f, &params, &b, &quad).unwrap();
        assert_eq!(a.field, c.field);
        let other = gain(&f, &f, &params, &b, &QuadratureSpec::monte_carlo(50, 10)).unwrap();
        assert_ne!(a.field, other.field);
    }

    #[test]
    fn tensor_budget_enforced() {
        let (grid, params, b) = setup();
        let f = maxwellian(&grid, params.alpha);
        let mut quad = QuadratureSpec::tensor(4, 4, 4);
        quad.budget = 10;
        assert!(matches!(
            gain(&f, &f, &params, &b, &quad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn averaging_of_one_is_kappa() {
        let (grid, params, b) = setup();
        let partner =
            CollisionState::new(Vec3::zeros(), 0.0, Vec3::new(0.2, 0.1, 0.0), 0.7).unwrap();
        let s = averaging_s(
            &|_, _| 1.0,
            PsiWeight::One,
            &partner,
            &params,
            &b,
            &QuadratureSpec::tensor(4, 10, 10),
            &grid,
        )
        .unwrap();
        let k = kappa(&b, params.alpha).unwrap();
        for v in s.field.values() {
            assert!((v / k - 1.0).abs() < 1e-6, "{v} vs {k}");
        }
    }
}
