//! Verdict sets behind `polyboltz verify` and the constants table.

use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use polyboltz::collision_op::{
    collision_frequency, collision_frequency_at, nu_derivatives, q_total, weak_form_moment,
};
use polyboltz::diagnostics::{
    check_conservation, check_decomposition, check_entropy_decay, check_l2_propagation,
    check_moment_generation, check_moment_propagation, energy_smoothing_ratio, moments,
    regularity_track, smoothing_ratio, Status, VerdictReport,
};
use polyboltz::family::polyatomic_maxwellian;
use polyboltz::kernel::{
    b_l1, b_l2, constant_ca, kappa, oscillatory_bound_check, rho_psi, AngularKernel, PsiWeight,
};
use polyboltz::kinematics::{
    inverse_params, jacobian_bl, total_energy, transform, BlParams, CollisionState,
};
use polyboltz::phase_space::{lp_norm, DistributionField, GridValues, Lp, ModelParams, PhaseGrid};
use polyboltz::rng::CounterRng;
use polyboltz::solver::{run, Trajectory};
use polyboltz::Vec3;
use statrs::function::beta::beta;

use crate::config::{InitialData, Resolved};
use crate::field_io;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Kinematics,
    Operator,
    Solver,
    Theorems,
    Constants,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Kinematics,
        Suite::Operator,
        Suite::Solver,
        Suite::Theorems,
        Suite::Constants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kinematics => "kinematics",
            Suite::Operator => "operator",
            Suite::Solver => "solver",
            Suite::Theorems => "theorems",
            Suite::Constants => "constants",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
                format!("unknown suite '{s}' (expected one of {})", names.join(", "))
            })
    }
}

/// Initial state described by the configuration.
pub fn initial_field(cfg: &Resolved) -> Result<DistributionField> {
    match &cfg.initial {
        InitialData::Scenario(s) => Ok(s.field(cfg.grid.clone(), &cfg.params)?),
        InitialData::File(path) => {
            let f = field_io::read(path)?.field;
            let (a, b) = (f.grid(), &*cfg.grid);
            if a != b {
                bail!(
                    "{}: grid ({}, {}, {}, {}) does not match the configured grid ({}, {}, {}, {})",
                    path.display(),
                    a.lv(),
                    a.nv(),
                    a.imax(),
                    a.ni(),
                    b.lv(),
                    b.nv(),
                    b.imax(),
                    b.ni()
                );
            }
            Ok(DistributionField::new(cfg.grid.clone(), f.into_values())?)
        }
    }
}

pub fn run_suite(suite: Suite, cfg: &Resolved) -> Result<Vec<VerdictReport>> {
    match suite {
        Suite::Kinematics => Ok(kinematics(cfg.seed, 100_000, 100)),
        Suite::Operator => operator(cfg),
        Suite::Solver => {
            let traj = trajectory(cfg)?;
            Ok(vec![
                check_entropy_decay(&traj, &cfg.params, 3.0),
                check_conservation(&traj, &cfg.params, cfg.solver.drift_tolerance),
            ])
        }
        Suite::Theorems => theorems(cfg),
        Suite::Constants => constants_suite(cfg),
    }
}

fn trajectory(cfg: &Resolved) -> Result<Trajectory> {
    let f0 = initial_field(cfg)?;
    Ok(run(&f0, &cfg.solver, &cfg.params, &cfg.kernel)?)
}

fn random_state(rng: &mut CounterRng) -> (CollisionState, BlParams) {
    let mut v = || Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()).map(|x| 6.0 * x - 3.0);
    let (a, b) = (v(), v());
    let z = 2.0 * rng.uniform() - 1.0;
    let phi = 2.0 * std::f64::consts::PI * rng.uniform();
    let st = (1.0 - z * z).sqrt();
    let sigma = Vec3::new(st * phi.cos(), st * phi.sin(), z);
    let s = CollisionState {
        v: a,
        i: 4.0 * rng.uniform(),
        v_star: b,
        i_star: 4.0 * rng.uniform(),
    };
    (
        s,
        BlParams {
            sigma,
            r: rng.uniform(),
            big_r: rng.uniform(),
        },
    )
}

/// Conservation and involution of the collision transform, and the Jacobian
/// determinant against finite differences.
pub fn kinematics(seed: u64, transforms: usize, jacobian_points: usize) -> Vec<VerdictReport> {
    let m = 1.0;
    let mut worst_p: f64 = 0.0;
    let mut worst_e: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    let mut failures = 0usize;
    for k in 0..transforms {
        let mut rng = CounterRng::new(seed, 101, 0, k as u64);
        let (s, p) = random_state(&mut rng);
        let post = transform(&s, &p, m);
        let e = total_energy(&s, m);
        let scale_v = (e / m).sqrt().max(1e-300);
        let dp = ((post.v + post.v_star) - (s.v + s.v_star)).norm() / scale_v;
        let lab = |c: &CollisionState| {
            0.5 * m * (c.v.norm_squared() + c.v_star.norm_squared()) + c.i + c.i_star
        };
        let de = (lab(&post) - lab(&s)).abs() / lab(&s);
        worst_p = worst_p.max(dp);
        worst_e = worst_e.max(de);
        match inverse_params(&s, &post, m) {
            Ok(back) => {
                let again = transform(&post, &back, m);
                let dv = ((again.v - s.v).norm() + (again.v_star - s.v_star).norm()) / scale_v;
                let di = ((again.i - s.i).abs() + (again.i_star - s.i_star).abs()) / e;
                worst_inv = worst_inv.max(dv.max(di));
            }
            Err(_) => failures += 1,
        }
    }
    let tol = 1e-12;
    let mut conservation = VerdictReport::new("transform_conservation", tol)
        .measure("transforms", transforms as f64)
        .measure("max_momentum_defect", worst_p)
        .measure("max_energy_defect", worst_e);
    if worst_p > tol || worst_e > tol {
        conservation = conservation.fail(None, None, "momentum or energy not conserved");
    }
    let mut involution = VerdictReport::new("transform_involution", tol)
        .measure("max_roundtrip_defect", worst_inv)
        .measure("degenerate_states", failures as f64);
    if worst_inv > tol || failures > 0 {
        involution = involution.fail(None, None, "inverse parameters do not undo the transform");
    }

    let mut worst_j: f64 = 0.0;
    for k in 0..jacobian_points {
        let mut rng = CounterRng::new(seed, 102, 0, k as u64);
        let (s, p) = random_state(&mut rng);
        let det = fd_jacobian(&s, &p, m);
        let exact = jacobian_bl(p.r, p.big_r);
        worst_j = worst_j.max((det - exact).abs() / exact);
    }
    let mut jac = VerdictReport::new("jacobian", 1e-6)
        .measure("points", jacobian_points as f64)
        .measure("max_relative_error", worst_j);
    if !(worst_j <= 1e-6) {
        jac = jac.fail(
            None,
            None,
            "finite-difference determinant disagrees with (1-r)(1-R)/8",
        );
    }
    vec![conservation, involution, jac]
}

/// Determinant of `(v*, I*) -> (v'*, I'*)` by fourth-order central differences.
pub fn fd_jacobian(s: &CollisionState, p: &BlParams, m: f64) -> f64 {
    let image = |x: [f64; 4]| {
        let t = CollisionState {
            v: s.v,
            i: s.i,
            v_star: Vec3::new(x[0], x[1], x[2]),
            i_star: x[3],
        };
        let o = transform(&t, p, m);
        [o.v_star[0], o.v_star[1], o.v_star[2], o.i_star]
    };
    let x0 = [s.v_star[0], s.v_star[1], s.v_star[2], s.i_star];
    let mut jac = nalgebra::Matrix4::<f64>::zeros();
    for col in 0..4 {
        let h = 1e-3 * x0[col].abs().max(1.0);
        let at = |d: f64| {
            let mut x = x0;
            x[col] += d;
            image(x)
        };
        let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
        for row in 0..4 {
            jac[(row, col)] = (8.0 * (p1[row] - m1[row]) - (p2[row] - m2[row])) / (12.0 * h);
        }
    }
    jac.determinant()
}

fn operator(cfg: &Resolved) -> Result<Vec<VerdictReport>> {
    let params = &cfg.params;
    let b = &cfg.kernel;
    let grid = &cfg.grid;
    let f = initial_field(cfg)?;
    let mut out = Vec::new();

    let nu = collision_frequency(&f, params, b)?;
    let mut worst: f64 = 0.0;
    let n = grid.len();
    for k in 0..20 {
        let node = (k * 7919 + 13) % n;
        let direct = collision_frequency_at(
            &f,
            params,
            b,
            &grid.velocity(node),
            grid.internal_energy(node),
        )?;
        worst = worst.max((direct - nu.values()[node]).abs() / direct.abs().max(1e-300));
    }
    let mut v = VerdictReport::new("collision_frequency_consistency", 1e-10)
        .measure("max_relative_difference", worst);
    if worst > 1e-10 {
        v = v.fail(
            None,
            None,
            "tabulated and direct collision frequencies differ",
        );
    }
    out.push(v);

    if params.gamma == 0.0 {
        let expected = kappa(b, params.alpha)? * lp_norm(&f, Lp::One, 0.0, params.m);
        let worst = nu
            .values()
            .iter()
            .map(|x| (x - expected).abs() / expected)
            .fold(0.0, f64::max);
        let mut v = VerdictReport::new("gamma0_degeneracy", 1e-10)
            .measure("max_relative_difference", worst);
        if worst > 1e-10 {
            v = v.fail(None, None, "nu differs from kappa ||g||_1");
        }
        out.push(v);
    }

    let m = params.m;
    let chis: [(&str, Box<dyn Fn(&Vec3, f64) -> f64 + Sync>); 5] = [
        ("1", Box::new(|_, _| 1.0)),
        ("v1", Box::new(|v, _| v[0])),
        ("v2", Box::new(|v, _| v[1])),
        ("v3", Box::new(|v, _| v[2])),
        (
            "energy",
            Box::new(move |v, i| 0.5 * m * v.norm_squared() + i),
        ),
    ];
    let mut v = VerdictReport::new("weak_form_conservation", 3.0);
    for (name, chi) in &chis {
        let est = weak_form_moment(&f, &f, chi.as_ref(), params, b, &cfg.solver.quad)?;
        let z = est.value.abs() / est.std_err.max(1e-300);
        v = v.measure(&format!("z_{name}"), z);
        if z > 3.0 && v.violation.is_none() {
            v = v.fail(
                None,
                None,
                format!("weak form for chi = {name} is {z} standard errors from zero"),
            );
        }
    }
    out.push(v);

    let mw = DistributionField::from_fn(
        grid.clone(),
        polyatomic_maxwellian(1.0, Vec3::zeros(), 1.0, params),
    )?;
    out.push(detailed_balance(&mw, params, b, &cfg.solver.quad, 0.02)?);
    out.push(nu_derivative_check(&f, params, b, 50)?);
    Ok(out)
}

/// `||Q(M, M)||_{L^1} / (||M||_{L^1} nu_bar)` with `nu_bar` the `M`-average of `nu[M]`.
pub fn detailed_balance_ratio(
    mw: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &polyboltz::collision_op::QuadratureSpec,
) -> Result<f64> {
    let q = q_total(mw, params, b, quad)?;
    let w = mw.grid().weight();
    let l1: f64 = q.values.values().iter().map(|x| x.abs()).sum::<f64>() * w;
    let mass = moments(mw, params.m).mass;
    let nu_bar: f64 =
        q.nu.values()
            .iter()
            .zip(mw.values())
            .map(|(n, f)| n * f)
            .sum::<f64>()
            * w
            / mass;
    Ok(l1 / (mass * nu_bar))
}

fn detailed_balance(
    mw: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
    quad: &polyboltz::collision_op::QuadratureSpec,
    tol: f64,
) -> Result<VerdictReport> {
    let ratio = detailed_balance_ratio(mw, params, b, quad)?;
    let v = VerdictReport::new("detailed_balance", tol)
        .measure("ratio", ratio)
        .measure("mc_samples", quad.mc_samples as f64);
    Ok(if ratio <= tol {
        v
    } else {
        v.fail(None, None, "Q(M, M) does not vanish to tolerance")
    })
}

/// Largest deviation of the analytic `nu` derivatives from central differences of
/// `nu` evaluated off-grid, over `probes` nodes.
pub fn nu_derivative_errors(
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
    probes: usize,
) -> Result<(f64, usize)> {
    let d = nu_derivatives(g, params, b)?;
    let grid = g.grid();
    let n = grid.len();
    let mut worst: f64 = 0.0;
    let mut worst_node = 0;
    for k in 0..probes {
        let node = (k * 104_729 + 31) % n;
        let v = grid.velocity(node);
        let i = grid.internal_energy(node);
        let nu = |v: &Vec3, i: f64| collision_frequency_at(g, params, b, v, i);
        let h = 1e-4;
        let scale = nu(&v, i)?.abs().max(1.0);
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = h;
            let fd = (nu(&(v + e), i)? - nu(&(v - e), i)?) / (2.0 * h);
            let err = (fd - d.dv[axis].values()[node]).abs() / scale;
            if err > worst {
                worst = err;
                worst_node = node;
            }
        }
        let hi = h.min(0.5 * i);
        let fd = (nu(&v, i + hi)? - nu(&v, i - hi)?) / (2.0 * hi);
        let err = (fd - d.di.values()[node]).abs() / scale;
        if err > worst {
            worst = err;
            worst_node = node;
        }
    }
    Ok((worst, worst_node))
}

fn nu_derivative_check(
    g: &DistributionField,
    params: &ModelParams,
    b: &AngularKernel,
    probes: usize,
) -> Result<VerdictReport> {
    let (worst, node) = nu_derivative_errors(g, params, b, probes)?;
    let v = VerdictReport::new("nu_derivatives", 1e-4).measure("max_scaled_error", worst);
    Ok(if worst <= 1e-4 {
        v
    } else {
        v.fail(
            Some(node),
            None,
            "derivative formula disagrees with finite differences",
        )
    })
}

fn theorems(cfg: &Resolved) -> Result<Vec<VerdictReport>> {
    let params = &cfg.params;
    let traj = trajectory(cfg)?;
    let mut out = vec![
        check_moment_propagation(&traj, 4.0, params),
        check_moment_generation(&traj, 4.0, params),
        check_l2_propagation(&traj, 0.0, params),
        regularity_track(&traj, params)?.verdict,
    ];
    let t0 = (0.1f64).min(cfg.solver.time_of(cfg.solver.total_steps()));
    let t0 = cfg.solver.time_of((t0 / cfg.solver.dt).round() as usize);
    out.push(check_decomposition(&traj, t0, params, &cfg.kernel)?);
    let f = &traj.snapshots[0].field;
    match b_l2(&cfg.kernel) {
        Ok(_) => {
            let r = smoothing_ratio(f, f, params, &cfg.kernel, &cfg.solver.quad)?;
            out.push(
                VerdictReport::new("smoothing_ratio", 0.0)
                    .measure("ratio", r.value)
                    .measure("noise", r.noise)
                    .with_status(if r.value.is_finite() {
                        Status::Pass
                    } else {
                        Status::Fail
                    }),
            );
        }
        Err(e) => out.push(
            VerdictReport::new("smoothing_ratio", 0.0)
                .with_status(Status::Skipped)
                .note(format!("{e}")),
        ),
    }
    if params.alpha > 0.0 {
        let r = energy_smoothing_ratio(f, f, params, &cfg.kernel, &cfg.solver.quad)?;
        let mut v = VerdictReport::new("energy_smoothing_ratio", 0.0)
            .measure("ratio", r.value)
            .measure("noise", r.noise)
            .with_status(if r.value.is_finite() {
                Status::Pass
            } else {
                Status::Fail
            });
        if params.alpha + params.delta <= 0.5 {
            v = v.note(
                "alpha + delta <= 1/2: rho for psi_rho2 diverges and the continuum norm is \
                 infinite; the discrete value grows like log(1/h_I)",
            );
        }
        out.push(v);
    } else {
        out.push(
            VerdictReport::new("energy_smoothing_ratio", 0.0)
                .with_status(Status::NotApplicable)
                .note("requires alpha > 0"),
        );
    }
    Ok(out)
}

/// `(closed form, quadrature)` of `rho^psi`.
pub fn rho_closed_form(psi: PsiWeight, alpha: f64, delta: f64) -> f64 {
    let c = 2f64.powf(1.75);
    match psi {
        PsiWeight::One => c * beta(alpha + 0.5, alpha + 1.0) * beta(1.5, 2.0 * alpha + 1.5),
        PsiWeight::Rho1 => {
            c * (beta(alpha + 0.5, alpha) * beta(1.5, 2.0 * alpha + 0.5)
                + beta(alpha + 0.5, alpha + 1.0) * beta(1.0, 2.0 * alpha + 1.5))
        }
        PsiWeight::Rho2 => {
            c * alpha
                * (beta(alpha + delta - 0.5, alpha + 1.0) + beta(alpha + delta + 0.5, alpha))
                * beta(1.5, 2.0 * alpha + delta + 0.5)
        }
    }
}

fn constants_suite(cfg: &Resolved) -> Result<Vec<VerdictReport>> {
    let params = &cfg.params;
    let mut out = Vec::new();
    let d_norm = beta(params.alpha + 1.0, params.alpha + 1.0) * beta(1.5, 2.0 * params.alpha + 2.0);
    let k = kappa(&cfg.kernel, params.alpha)?;
    let expected = b_l1(&cfg.kernel)? * d_norm;
    let err = (k - expected).abs() / expected;
    let mut v = VerdictReport::new("kappa", 1e-10)
        .measure("kappa", k)
        .measure("relative_error", err);
    if err > 1e-10 {
        v = v.fail(None, None, "kappa differs from ||b||_1 ||d_alpha||_1");
    }
    out.push(v);
    for psi in PsiWeight::ALL {
        let name = format!("rho_{}", psi.name());
        match rho_psi(psi, params.alpha, params.delta) {
            Ok(q) => {
                let c = rho_closed_form(psi, params.alpha, params.delta);
                let err = (q - c).abs() / c;
                let mut v = VerdictReport::new(name, 1e-8)
                    .measure("quadrature", q)
                    .measure("closed_form", c)
                    .measure("relative_error", err);
                if err > 1e-8 {
                    v = v.fail(None, None, "quadrature disagrees with the Beta closed form");
                }
                out.push(v);
            }
            Err(e) => out.push(
                VerdictReport::new(name, 1e-8)
                    .with_status(Status::NotApplicable)
                    .note(format!("{e}")),
            ),
        }
    }
    if params.alpha >= 0.0 {
        out.push(oscillatory_sweep(params.alpha, 800)?);
    }
    let a = 0.5 * params.gamma;
    let s = params.gamma + 3.0;
    let ca = constant_ca(a, s, params, &cfg.grid)?;
    let mut v = VerdictReport::new("constant_ca", 0.0)
        .measure("a", a)
        .measure("s", s)
        .measure("value", ca);
    if !ca.is_finite() {
        v = v.fail(None, None, "C_a is not finite");
    }
    out.push(v);
    Ok(out)
}

/// Checks `|int e^{-ixr} r^a (1-r)^a dr| <= 2 min(1, 1/|x|)` on `points` values of `x`.
pub fn oscillatory_sweep(alpha: f64, points: usize) -> Result<VerdictReport> {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_x = 0.0;
    let mut failures = 0usize;
    let half = (points / 2).max(2);
    for k in 0..points {
        // Logarithmic spacing over [1e-3, 1e4] on both signs.
        let t = (k % half) as f64 / (half - 1) as f64;
        let mag = 10f64.powf(-3.0 + 7.0 * t);
        let x = if k < half { mag } else { -mag };
        let (lhs, rhs) = oscillatory_bound_check(x, alpha)?;
        if lhs - rhs > worst {
            worst = lhs - rhs;
            worst_x = x;
        }
        if lhs > rhs {
            failures += 1;
        }
    }
    let v = VerdictReport::new("oscillatory_bound", 0.0)
        .measure("points", points as f64)
        .measure("max_lhs_minus_rhs", worst)
        .measure("worst_x", worst_x);
    Ok(if failures == 0 {
        v
    } else {
        v.fail(None, None, format!("{failures} points violate the bound"))
    })
}

/// Parses a kernel description: `unit`, `constant:V`, `power:SCALE:EXPONENT`,
/// `kappa:K` (constant kernel with that `kappa` at the given `alpha`) or
/// `table:PATH` (whitespace-separated `x b` lines).
pub fn parse_kernel(spec: &str, alpha: f64) -> Result<AngularKernel> {
    let mut parts = spec.splitn(2, ':');
    let family = parts.next().unwrap_or_default();
    let rest = parts.next();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .with_context(|| format!("bad number '{s}' in kernel spec"))
    };
    let kernel = match (family, rest) {
        ("unit", None) => AngularKernel::unit(),
        ("constant", Some(v)) => AngularKernel::Constant { value: num(v)? },
        ("kappa", Some(v)) => AngularKernel::with_kappa(num(v)?, alpha)?,
        ("power", Some(v)) => {
            let (s, e) = v
                .split_once(':')
                .context("power kernel needs SCALE:EXPONENT")?;
            AngularKernel::Power {
                scale: num(s)?,
                exponent: num(e)?,
            }
        }
        ("table", Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            let mut x = Vec::new();
            let mut b = Vec::new();
            for line in text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
            {
                let mut cols = line.split_whitespace();
                match (cols.next(), cols.next()) {
                    (Some(a), Some(c)) => {
                        x.push(num(a)?);
                        b.push(num(c)?);
                    }
                    _ => bail!("kernel table line '{line}' needs two columns"),
                }
            }
            AngularKernel::Table { x, b }
        }
        _ => bail!("unknown kernel spec '{spec}'"),
    };
    kernel.validate()?;
    Ok(kernel)
}

/// One line of the constants table; `Err` holds the divergence condition.
pub type ConstantRow = (String, std::result::Result<f64, String>);

pub fn constants_table(
    params: &ModelParams,
    b: &AngularKernel,
    a_list: &[(f64, f64)],
    grid: &Arc<PhaseGrid>,
) -> Vec<ConstantRow> {
    let mut rows = vec![(
        "kappa".to_string(),
        kappa(b, params.alpha).map_err(|e| e.to_string()),
    )];
    for psi in PsiWeight::ALL {
        rows.push((
            format!("rho[{}]", psi.name()),
            rho_psi(psi, params.alpha, params.delta).map_err(|e| e.to_string()),
        ));
    }
    for &(a, s) in a_list {
        rows.push((
            format!("C_a[a={a},s={s}]"),
            constant_ca(a, s, params, grid).map_err(|e| e.to_string()),
        ));
    }
    rows
}

pub fn format_constants(params: &ModelParams, rows: &[ConstantRow]) -> String {
    let mut out = format!(
        "# polyboltz constants v1 alpha={} gamma={} delta={} m={}\n",
        params.alpha, params.gamma, params.delta, params.m
    );
    for (name, value) in rows {
        match value {
            Ok(v) => out.push_str(&format!("{name:<24} {v:e}\n")),
            Err(cond) => out.push_str(&format!("{name:<24} diverges ({cond})\n")),
        }
    }
    out
}
