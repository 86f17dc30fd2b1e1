//! TOML run configuration.
//!
//! Every section and key is optional; missing keys take the defaults below.
//!
//! ```toml
//! [run]
//! scenario = "two_bump"        # see `Scenario::ALL`
//! # field_file = "f0.pbzf"     # overrides the scenario
//! output_dir = "out"
//! seed = 0
//!
//! [model]
//! m = 1.0                      # molecular mass
//! alpha = 0.5                  # internal degrees of freedom exponent, > -1
//! gamma = 1.0                  # hard-potential exponent in [0, 2]
//! eps_plus = 0.01              # shift realising k+ as k + eps_plus
//! # delta = 0.0                # default max(1/2 - alpha, 0)
//!
//! [grid]
//! lv = 5.0                     # velocity box half-width
//! nv = 16                      # cells per velocity axis
//! imax = 12.0                  # internal energy cutoff
//! ni = 16                      # internal energy cells
//!
//! [solver]
//! dt = 0.01                    # time step
//! t_end = 1.0                  # final time
//! scheme = "explicit_euler"    # or "rk2"
//! clamp_negative = true
//! conservative = true
//! snapshot_every = 1           # steps between snapshot files
//! drift_tolerance = 1e-3       # relative invariant drift per unit time
//!
//! [quadrature]
//! mode = "monte_carlo"         # or "tensor_deterministic"
//! mc_samples = 2000            # samples per output node
//! sphere_order = 6
//! r_nodes = 8
//! big_r_nodes = 8
//! budget = 2000000             # tensor-mode evaluations per node
//!
//! [kernel]
//! family = "constant"          # "constant" | "power" | "table"
//! value = 0.15915494309189535  # 1/(2 pi), so that ||b||_1 = 1
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use polyboltz::collision_op::{QuadratureMode, QuadratureSpec};
use polyboltz::family::Scenario;
use polyboltz::kernel::AngularKernel;
use polyboltz::phase_space::{default_delta, ModelParams, PhaseGrid};
use polyboltz::solver::{Scheme, SolverConfig};
use serde::{Deserialize, Serialize};

/// Configuration problem; the message names the offending key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub scenario: String,
    pub field_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            scenario: Scenario::TwoBump.name().to_string(),
            field_file: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub m: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub eps_plus: f64,
    pub delta: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            m: 1.0,
            alpha: 0.5,
            gamma: 1.0,
            eps_plus: 0.01,
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub lv: f64,
    pub nv: usize,
    pub imax: f64,
    pub ni: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            lv: 5.0,
            nv: 16,
            imax: 12.0,
            ni: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub clamp_negative: bool,
    pub conservative: bool,
    pub snapshot_every: usize,
    pub drift_tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            dt: d.dt,
            t_end: d.t_end,
            scheme: d.scheme,
            clamp_negative: d.clamp_negative,
            conservative: d.conservative,
            snapshot_every: d.snapshot_every,
            drift_tolerance: d.drift_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSection {
    pub mode: QuadratureMode,
    pub mc_samples: usize,
    pub sphere_order: usize,
    pub r_nodes: usize,
    pub big_r_nodes: usize,
    pub budget: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        let d = QuadratureSpec::default();
        Self {
            mode: d.mode,
            mc_samples: d.mc_samples,
            sphere_order: d.sphere_order,
            r_nodes: d.r_nodes,
            big_r_nodes: d.big_r_nodes,
            budget: d.budget,
        }
    }
}

/// The file as written, with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub quadrature: QuadratureSection,
    pub kernel: AngularKernel,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            model: ModelSection::default(),
            grid: GridSection::default(),
            solver: SolverSection::default(),
            quadrature: QuadratureSection::default(),
            kernel: AngularKernel::unit(),
        }
    }
}

/// Where the initial state comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Scenario(Scenario),
    File(PathBuf),
}

/// Validated configuration ready for the library.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: ModelParams,
    pub grid: Arc<PhaseGrid>,
    pub solver: SolverConfig,
    pub kernel: AngularKernel,
    pub initial: InitialData,
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn at(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{key}: {e}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    /// Validates every section. Relative `field_file` paths are taken relative to `base`.
    pub fn resolve(&self, base: Option<&Path>) -> Result<Resolved, ConfigError> {
        let m = &self.model;
        let check = |key: &str, ok: bool, what: &str, value: f64| {
            if ok {
                Ok(())
            } else {
                Err(at(key, format!("{what}, got {value}")))
            }
        };
        check(
            "model.m",
            m.m > 0.0 && m.m.is_finite(),
            "must be positive",
            m.m,
        )?;
        check(
            "model.alpha",
            m.alpha > -1.0 && m.alpha.is_finite(),
            "must exceed -1",
            m.alpha,
        )?;
        check(
            "model.gamma",
            (0.0..=2.0).contains(&m.gamma),
            "must lie in [0, 2]",
            m.gamma,
        )?;
        check(
            "model.eps_plus",
            m.eps_plus > 0.0 && m.eps_plus.is_finite(),
            "must be positive",
            m.eps_plus,
        )?;
        let delta = m.delta.unwrap_or_else(|| default_delta(m.alpha));
        check(
            "model.delta",
            delta >= 0.0 && delta.is_finite(),
            "must be nonnegative",
            delta,
        )?;
        let params = ModelParams {
            m: m.m,
            alpha: m.alpha,
            gamma: m.gamma,
            eps_plus: m.eps_plus,
            delta,
        };

        let g = &self.grid;
        check(
            "grid.lv",
            g.lv > 0.0 && g.lv.is_finite(),
            "must be positive",
            g.lv,
        )?;
        check(
            "grid.imax",
            g.imax > 0.0 && g.imax.is_finite(),
            "must be positive",
            g.imax,
        )?;
        check("grid.nv", g.nv >= 5, "must be at least 5", g.nv as f64)?;
        check("grid.ni", g.ni >= 5, "must be at least 5", g.ni as f64)?;
        let grid = Arc::new(PhaseGrid::new(g.lv, g.nv, g.imax, g.ni).map_err(|e| at("grid", e))?);

        let q = &self.quadrature;
        check(
            "quadrature.mc_samples",
            q.mc_samples >= 2,
            "must be at least 2",
            q.mc_samples as f64,
        )?;
        check(
            "quadrature.sphere_order",
            q.sphere_order >= 1,
            "must be at least 1",
            q.sphere_order as f64,
        )?;
        check(
            "quadrature.r_nodes",
            q.r_nodes >= 1,
            "must be at least 1",
            q.r_nodes as f64,
        )?;
        check(
            "quadrature.big_r_nodes",
            q.big_r_nodes >= 1,
            "must be at least 1",
            q.big_r_nodes as f64,
        )?;
        check(
            "quadrature.budget",
            q.budget >= 1,
            "must be at least 1",
            q.budget as f64,
        )?;
        let quad = QuadratureSpec {
            mode: q.mode,
            mc_samples: q.mc_samples,
            sphere_order: q.sphere_order,
            r_nodes: q.r_nodes,
            big_r_nodes: q.big_r_nodes,
            seed: self.run.seed,
            budget: q.budget,
        };

        let s = &self.solver;
        check(
            "solver.dt",
            s.dt > 0.0 && s.dt.is_finite(),
            "must be positive",
            s.dt,
        )?;
        check(
            "solver.t_end",
            s.t_end >= 0.0 && s.t_end.is_finite(),
            "must be nonnegative",
            s.t_end,
        )?;
        check(
            "solver.snapshot_every",
            s.snapshot_every >= 1,
            "must be at least 1",
            s.snapshot_every as f64,
        )?;
        check(
            "solver.drift_tolerance",
            s.drift_tolerance > 0.0,
            "must be positive",
            s.drift_tolerance,
        )?;
        let solver = SolverConfig {
            dt: s.dt,
            t_end: s.t_end,
            scheme: s.scheme,
            clamp_negative: s.clamp_negative,
            conservative: s.conservative,
            quad,
            snapshot_every: s.snapshot_every,
            drift_tolerance: s.drift_tolerance,
        };
        solver.validate().map_err(|e| at("solver", e))?;

        self.kernel.validate().map_err(|e| at("kernel", e))?;

        let initial = match &self.run.field_file {
            Some(p) => {
                let p = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                InitialData::File(p)
            }
            None => InitialData::Scenario(
                Scenario::from_name(&self.run.scenario).map_err(|e| at("run.scenario", e))?,
            ),
        };
        Ok(Resolved {
            params,
            grid,
            solver,
            kernel: self.kernel.clone(),
            initial,
            output_dir: self.run.output_dir.clone(),
            seed: self.run.seed,
        })
    }
}

impl Resolved {
    /// Replaces the seed of the run and of its quadrature.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.solver.quad.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let r = cfg.resolve(None).unwrap();
        assert_eq!(r.params.delta, 0.0);
        assert_eq!(r.grid.nv(), 16);
        assert_eq!(r.initial, InitialData::Scenario(Scenario::TwoBump));
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::parse("[grid]\nnv = 3\n")
            .unwrap()
            .resolve(None)
            .unwrap_err();
        assert!(e.0.starts_with("grid.nv"), "{e}");
        let e = RunConfig::parse("[model]\ngamma = 3.0\n")
            .unwrap()
            .resolve(None)
            .unwrap_err();
        assert!(e.0.starts_with("model.gamma"), "{e}");
        let e = RunConfig::parse("[run]\nscenario = \"x\"\n")
            .unwrap()
            .resolve(None)
            .unwrap_err();
        assert!(e.0.starts_with("run.scenario"), "{e}");
        let e = RunConfig::parse("[grid]\nnvv = 3\n").unwrap_err();
        assert!(e.0.contains("nvv"), "{e}");
    }

    #[test]
    fn kernel_sections_parse() {
        let cfg = RunConfig::parse("[kernel]\nfamily = \"power\"\nscale = 2.0\nexponent = 0.5\n")
            .unwrap();
        assert_eq!(
            cfg.kernel,
            AngularKernel::Power {
                scale: 2.0,
                exponent: 0.5
            }
        );
    }

    #[test]
    fn seed_override_reaches_quadrature() {
        let r = RunConfig::default().resolve(None).unwrap().with_seed(9);
        assert_eq!(r.solver.quad.seed, 9);
    }
}
