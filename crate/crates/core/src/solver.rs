//! Time integration of `df/dt = Q(f, f)` and the rough/smooth Duhamel split.

use std::sync::Arc;

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::collision_op::{collision_frequency, gain, CollisionFrequencyField, QuadratureSpec};
use crate::diagnostics::{entropy, moments, Moments};
use crate::error::{Error, Result};
use crate::kernel::{min_bracket_ratio, AngularKernel};
use crate::phase_space::{
    h1v_norm, lp_norm, weighted_di_norm, DistributionField, GridValues, Lp, ModelParams,
};
use crate::rng::derive_seed;

/// Largest admissible `dt * max nu`.
pub const STABILITY_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Forward Euler for the gain, implicit for the loss:
    /// `f_{n+1} = (f_n + dt Q+(f_n, f_n)) / (1 + dt nu[f_n])`.
    ExplicitEuler,
    /// Average of `f_n` and two semi-implicit stages (Heun form), second order.
    Rk2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Floor negative values at zero (and report the removed mass) instead of failing.
    pub clamp_negative: bool,
    /// Rescale each new state by `exp(l0 + l.v + l4 (m|v|^2/2 + I))` so that mass,
    /// momentum and energy match the previous state exactly.
    pub conservative: bool,
    pub quad: QuadratureSpec,
    /// Keep a snapshot every this many steps (the initial and final states are always kept).
    pub snapshot_every: usize,
    /// Relative drift per unit time of mass, momentum and energy above which the run is flagged.
    pub drift_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 1.0,
            scheme: Scheme::ExplicitEuler,
            clamp_negative: true,
            conservative: true,
            quad: QuadratureSpec::default(),
            snapshot_every: 1,
            drift_tolerance: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be at least 1".into()));
        }
        if !(self.drift_tolerance > 0.0) {
            return Err(Error::Config("drift_tolerance must be positive".into()));
        }
        self.quad.validate()
    }

    /// Number of steps from `t = 0` to `t_end`.
    pub fn total_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Time of step index `n`.
    pub fn time_of(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Per-state diagnostics written once per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    pub entropy: f64,
    /// Standard error of the entropy change over this step from the gain estimate.
    pub entropy_mc_error: f64,
    pub l1_2: f64,
    pub l1_4: f64,
    pub l2_0: f64,
    /// `L^2` norm with weight index `(gamma + 2)+`.
    pub l2_gp2: f64,
    pub h1v: f64,
    pub idi_l2: f64,
    /// `min nu[f] / <v,I>^gamma` for this state.
    pub nu_min_ratio: f64,
    /// `dt max nu` of the state the step started from.
    pub dt_nu_max: f64,
    /// Relative mass, momentum-magnitude and energy defects of the step before correction.
    pub raw_defects: [f64; 3],
    pub clamped_mass: f64,
}

impl StepRecord {
    fn measure(
        f: &DistributionField,
        nu: &CollisionFrequencyField,
        params: &ModelParams,
        step: usize,
        t: f64,
    ) -> Self {
        let m = moments(f, params.m);
        Self {
            step,
            t,
            mass: m.mass,
            momentum: m.momentum,
            energy: m.energy,
            entropy: entropy(f, params),
            entropy_mc_error: 0.0,
            l1_2: lp_norm(f, Lp::One, 2.0, params.m),
            l1_4: lp_norm(f, Lp::One, 4.0, params.m),
            l2_0: lp_norm(f, Lp::Two, 0.0, params.m),
            l2_gp2: lp_norm(f, Lp::Two, params.plus(params.gamma + 2.0), params.m),
            h1v: h1v_norm(f).unwrap_or(f64::NAN),
            idi_l2: weighted_di_norm(f, params.delta).unwrap_or(f64::NAN),
            nu_min_ratio: min_bracket_ratio(nu, params),
            dt_nu_max: 0.0,
            raw_defects: [0.0; 3],
            clamped_mass: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub field: DistributionField,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// Diagnostics of the starting state.
    pub initial: StepRecord,
    /// Diagnostics after every step taken.
    pub records: Vec<StepRecord>,
    /// Human-readable warnings (drift above tolerance, clamping).
    pub flags: Vec<String>,
    pub dt: f64,
}

impl Trajectory {
    pub fn final_field(&self) -> &DistributionField {
        &self
            .snapshots
            .last()
            .expect("trajectory holds its initial state")
            .field
    }

    /// All per-state records, starting with the initial state.
    pub fn all_records(&self) -> impl Iterator<Item = &StepRecord> {
        std::iter::once(&self.initial).chain(self.records.iter())
    }

    /// Snapshot whose time equals `t` to within `1e-9 max(1, |t|)`.
    pub fn snapshot_at(&self, t: f64) -> Result<usize> {
        self.snapshots
            .iter()
            .position(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or(Error::Lookup(t))
    }
}

/// Result of one step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub field: DistributionField,
    pub dt_nu_max: f64,
    pub entropy_mc_error: f64,
    pub raw_defects: [f64; 3],
    pub clamped_mass: f64,
}

fn check_stability(dt: f64, nu: &CollisionFrequencyField) -> Result<f64> {
    let product = dt * nu.max();
    if product > STABILITY_LIMIT {
        return Err(Error::StepSize {
            product,
            limit: STABILITY_LIMIT,
        });
    }
    Ok(product)
}

/// One semi-implicit stage. Returns the new values and the per-node standard error
/// they inherit from the gain estimate.
fn semi_implicit(
    f: &DistributionField,
    nu: &CollisionFrequencyField,
    dt: f64,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &QuadratureSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = gain(f, f, params, b, quad)?;
    let mut values = Vec::with_capacity(f.values().len());
    let mut errs = Vec::with_capacity(f.values().len());
    for ((fv, qv), (n, se)) in f
        .values()
        .iter()
        .zip(q.field.values())
        .zip(nu.values().iter().zip(&q.std_err))
    {
        let denom = 1.0 + dt * n;
        values.push((fv + dt * qv) / denom);
        errs.push(dt * se / denom);
    }
    Ok((values, errs))
}

/// Advances `f` by one step. `nu` must be `nu[f]`; `step_index` selects the random
/// streams so that restarting from a stored state reproduces the same sequence.
pub fn step(
    f: &DistributionField,
    nu: &CollisionFrequencyField,
    cfg: &SolverConfig,
    params: &ModelParams,
    b: &AngularKernel,
    step_index: usize,
) -> Result<StepOutcome> {
    let dt = cfg.dt;
    let dt_nu_max = check_stability(dt, nu)?;
    let stage_quad = |stage: u64| QuadratureSpec {
        seed: derive_seed(cfg.quad.seed, 2 * step_index as u64 + stage),
        ..cfg.quad.clone()
    };
    let grid = f.grid_arc().clone();
    let (values, node_err) = match cfg.scheme {
        Scheme::ExplicitEuler => semi_implicit(f, nu, dt, params, b, &stage_quad(0))?,
        Scheme::Rk2 => {
            let (v1, e1) = semi_implicit(f, nu, dt, params, b, &stage_quad(0))?;
            let f1 = DistributionField::new(grid.clone(), v1)?;
            let nu1 = collision_frequency(&f1, params, b)?;
            check_stability(dt, &nu1)?;
            let (v2, e2) = semi_implicit(&f1, &nu1, dt, params, b, &stage_quad(1))?;
            let values = f
                .values()
                .iter()
                .zip(&v2)
                .map(|(a, c)| 0.5 * (a + c))
                .collect();
            let errs = e1.iter().zip(&e2).map(|(a, c)| 0.5 * a.hypot(*c)).collect();
            (values, errs)
        }
    };
    let (field, clamped_mass) = if cfg.clamp_negative {
        DistributionField::floored(grid.clone(), values)?
    } else {
        (DistributionField::new(grid.clone(), values)?, 0.0)
    };
    let before = moments(f, params.m);
    let after = moments(&field, params.m);
    let raw_defects = if before.mass > 0.0 {
        relative_defects(&before, &after, params.m)
    } else {
        [0.0; 3]
    };
    let field = if cfg.conservative {
        conservative_projection(&field, &before, params.m)?
    } else {
        field
    };
    let entropy_mc_error = entropy_error(&field, &node_err, params);
    Ok(StepOutcome {
        field,
        dt_nu_max,
        entropy_mc_error,
        raw_defects,
        clamped_mass,
    })
}

fn relative_defects(a: &Moments, b: &Moments, m: f64) -> [f64; 3] {
    [
        (b.mass - a.mass) / a.mass,
        momentum_distance(a, b) / momentum_scale(a, m),
        (b.energy - a.energy) / a.energy,
    ]
}

fn momentum_distance(a: &Moments, b: &Moments) -> f64 {
    (0..3)
        .map(|k| (a.momentum[k] - b.momentum[k]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `sqrt(m M E)`, the natural size of a momentum for mass `M` and energy `E`.
fn momentum_scale(a: &Moments, m: f64) -> f64 {
    (m * a.mass * a.energy).sqrt()
}

/// First-order propagation of per-node errors into `int f log(f / I^alpha)`.
fn entropy_error(f: &DistributionField, node_err: &[f64], params: &ModelParams) -> f64 {
    let grid = f.grid();
    let ni = grid.ni();
    let w = grid.weight();
    let sum: f64 = f
        .values()
        .iter()
        .zip(node_err)
        .enumerate()
        .filter(|(_, (fv, _))| **fv > 0.0)
        .map(|(n, (fv, e))| {
            let i = grid.i_nodes()[n % ni];
            let d = (fv.ln() - params.alpha * i.ln() + 1.0) * e * w;
            d * d
        })
        .sum();
    sum.sqrt()
}

/// Multiplies `f` by `exp(l . phi)` with `phi = (1, v, m|v|^2/2 + I)` chosen by
/// Newton's method so that the collision invariants match `target`.
pub fn conservative_projection(
    f: &DistributionField,
    target: &Moments,
    m: f64,
) -> Result<DistributionField> {
    let grid = f.grid();
    let w = grid.weight();
    let features: Vec<(usize, Vector5<f64>)> = f
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(n, _)| {
            let v = grid.velocity(n);
            let e = 0.5 * m * v.norm_squared() + grid.internal_energy(n);
            (n, Vector5::new(1.0, v[0], v[1], v[2], e))
        })
        .collect();
    if features.is_empty() {
        return Ok(f.clone());
    }
    // Momentum is `m int f v` while the feature integrates `f v`.
    let goal = Vector5::new(
        target.mass,
        target.momentum[0] / m,
        target.momentum[1] / m,
        target.momentum[2] / m,
        target.energy,
    );
    let scale = goal[0].abs().max(f64::MIN_POSITIVE);
    let mut lambda = Vector5::<f64>::zeros();
    for _ in 0..30 {
        let mut value = Vector5::<f64>::zeros();
        let mut jac = Matrix5::<f64>::zeros();
        for (n, phi) in &features {
            let c = f.values()[*n] * w * lambda.dot(phi).exp();
            value += c * phi;
            jac += c * phi * phi.transpose();
        }
        let residual = value - goal;
        if residual.norm() <= 1e-15 * scale.max(goal.norm()) {
            break;
        }
        let Some(step) = jac.lu().solve(&residual) else {
            return Err(Error::Degenerate(
                "moment system of the conservative projection is singular".into(),
            ));
        };
        lambda -= step;
        if step.norm() < 1e-16 {
            break;
        }
    }
    let mut values = f.values().to_vec();
    for (n, phi) in &features {
        values[*n] *= lambda.dot(phi).exp();
    }
    DistributionField::new(f.grid_arc().clone(), values)
}

/// Runs from `t = 0` to `cfg.t_end`.
pub fn run(
    f0: &DistributionField,
    cfg: &SolverConfig,
    params: &ModelParams,
    b: &AngularKernel,
) -> Result<Trajectory> {
    run_from(f0, 0, cfg, params, b)
}

/// Runs from the state `f` at step index `first_step` to `cfg.t_end`. Random
/// streams are keyed by the absolute step index, so a restart reproduces an
/// uninterrupted run.
pub fn run_from(
    f: &DistributionField,
    first_step: usize,
    cfg: &SolverConfig,
    params: &ModelParams,
    b: &AngularKernel,
) -> Result<Trajectory> {
    cfg.validate()?;
    params.validate()?;
    b.validate()?;
    let last_step = cfg.total_steps();
    if first_step > last_step {
        return Err(Error::Config(format!(
            "restart step {first_step} lies beyond the final step {last_step}"
        )));
    }
    let mut nu = collision_frequency(f, params, b)?;
    let t_start = cfg.time_of(first_step);
    let initial = StepRecord::measure(f, &nu, params, first_step, t_start);
    if last_step > first_step && initial.mass <= 0.0 {
        return Err(Error::Degenerate("initial datum has zero mass".into()));
    }
    let mut snapshots = vec![Snapshot {
        step: first_step,
        t: t_start,
        field: f.clone(),
    }];
    let mut records = Vec::with_capacity(last_step - first_step);
    let mut flags = Vec::new();
    let mut current = f.clone();
    for n in first_step..last_step {
        let outcome = step(&current, &nu, cfg, params, b, n)?;
        current = outcome.field;
        nu = collision_frequency(&current, params, b)?;
        let t = cfg.time_of(n + 1);
        let mut record = StepRecord::measure(&current, &nu, params, n + 1, t);
        record.entropy_mc_error = outcome.entropy_mc_error;
        record.dt_nu_max = outcome.dt_nu_max;
        record.raw_defects = outcome.raw_defects;
        record.clamped_mass = outcome.clamped_mass;
        if outcome.clamped_mass > 0.0 {
            flags.push(format!(
                "step {}: clamped mass {:.3e}",
                n + 1,
                outcome.clamped_mass
            ));
        }
        records.push(record);
        if (n + 1 - first_step).is_multiple_of(cfg.snapshot_every) || n + 1 == last_step {
            snapshots.push(Snapshot {
                step: n + 1,
                t,
                field: current.clone(),
            });
        }
    }
    if let Some(last) = records.last() {
        let elapsed = last.t - t_start;
        let drift = [
            ("mass", (last.mass - initial.mass).abs() / initial.mass),
            ("momentum", {
                let a = Moments::from(&initial);
                momentum_distance(&a, &Moments::from(last)) / momentum_scale(&a, params.m)
            }),
            (
                "energy",
                (last.energy - initial.energy).abs() / initial.energy,
            ),
        ];
        for (name, value) in drift {
            if value / elapsed.max(f64::MIN_POSITIVE) > cfg.drift_tolerance {
                flags.push(format!(
                    "{name} drift {value:.3e} over t = {elapsed} exceeds tolerance {} per unit time",
                    cfg.drift_tolerance
                ));
            }
        }
    }
    Ok(Trajectory {
        snapshots,
        initial,
        records,
        flags,
        dt: cfg.dt,
    })
}

/// Rough and smooth parts of a trajectory after `t0`.
#[derive(Debug, Clone)]
pub struct DuhamelSplit {
    pub times: Vec<f64>,
    /// `f(t0) exp(-int_{t0}^t nu[f(s)] ds)`.
    pub rough: Vec<DistributionField>,
    /// `f(t) - f_R(t)`, floored at zero.
    pub smooth: Vec<DistributionField>,
    /// Mass removed by the floor at each time.
    pub floored_mass: Vec<f64>,
    /// `min nu / <v,I>^gamma` over the snapshots from `t0` on.
    pub lower_bound: f64,
}

/// Splits the snapshots from `t0` on into rough and smooth parts. The exponent
/// is integrated by the trapezoidal rule over the snapshot times.
pub fn duhamel_split(
    traj: &Trajectory,
    t0: f64,
    params: &ModelParams,
    b: &AngularKernel,
) -> Result<DuhamelSplit> {
    let start = traj.snapshot_at(t0)?;
    let snaps = &traj.snapshots[start..];
    let base = &snaps[0].field;
    let grid: Arc<_> = base.grid_arc().clone();
    let nus: Vec<CollisionFrequencyField> = snaps
        .iter()
        .map(|s| collision_frequency(&s.field, params, b))
        .collect::<Result<_>>()?;
    let lower_bound = nus
        .iter()
        .map(|nu| min_bracket_ratio(nu, params))
        .fold(f64::INFINITY, f64::min);
    let mut exponent = vec![0.0; grid.len()];
    let mut times = Vec::with_capacity(snaps.len());
    let mut rough = Vec::with_capacity(snaps.len());
    let mut smooth = Vec::with_capacity(snaps.len());
    let mut floored_mass = Vec::with_capacity(snaps.len());
    for (k, snap) in snaps.iter().enumerate() {
        if k > 0 {
            let h = snap.t - snaps[k - 1].t;
            for (e, (a, c)) in exponent
                .iter_mut()
                .zip(nus[k - 1].values().iter().zip(nus[k].values()))
            {
                *e += 0.5 * h * (a + c);
            }
        }
        let r: Vec<f64> = base
            .values()
            .iter()
            .zip(&exponent)
            .map(|(f, e)| f * (-e).exp())
            .collect();
        let s: Vec<f64> = snap
            .field
            .values()
            .iter()
            .zip(&r)
            .map(|(f, r)| f - r)
            .collect();
        let (s_field, removed) = DistributionField::floored(grid.clone(), s)?;
        times.push(snap.t);
        rough.push(DistributionField::new(grid.clone(), r)?);
        smooth.push(s_field);
        floored_mass.push(removed);
    }
    Ok(DuhamelSplit {
        times,
        rough,
        smooth,
        floored_mass,
        lower_bound,
    })
}

/// `min` over snapshots and nodes of `nu[f(s)] / <v,I>^gamma`.
pub fn lower_bound_a(traj: &Trajectory, params: &ModelParams, b: &AngularKernel) -> Result<f64> {
    let mut best = f64::INFINITY;
    for snap in &traj.snapshots {
        if snap.field.values().iter().all(|v| *v == 0.0) {
            return Err(Error::Degenerate(format!(
                "snapshot at t = {} has zero mass",
                snap.t
            )));
        }
        let nu = collision_frequency(&snap.field, params, b)?;
        best = best.min(min_bracket_ratio(&nu, params));
    }
    Ok(best)
}
