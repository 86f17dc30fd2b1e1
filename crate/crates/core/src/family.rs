//! Analytic test fields and initial-data scenarios.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::phase_space::{DistributionField, GridValues, ModelParams, PhaseGrid};
use crate::Vec3;

/// Polyatomic Maxwellian with density `n`, bulk velocity `u` and temperature `t`,
/// normalised so that its integral over `R^3 x (0, inf)` is `n`.
pub fn polyatomic_maxwellian(
    n: f64,
    u: Vec3,
    t: f64,
    params: &ModelParams,
) -> impl Fn(&Vec3, f64) -> f64 + Send + Sync + 'static {
    let m = params.m;
    let alpha = params.alpha;
    let log_norm = n.ln() + 1.5 * (m / (2.0 * std::f64::consts::PI * t)).ln()
        - ln_gamma(alpha + 1.0)
        - (alpha + 1.0) * t.ln();
    move |v: &Vec3, i: f64| {
        if i <= 0.0 {
            return 0.0;
        }
        (log_norm + alpha * i.ln() - (0.5 * m * (v - u).norm_squared() + i) / t).exp()
    }
}

/// Members of the test family and the initial-data scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Maxwellian,
    ShiftedMaxwellian,
    TwoBump,
    AnisotropicGaussian,
    IWeightedGaussian,
    CompactPlateau,
    /// Unit-mass Maxwellian at unit temperature.
    Equilibrium,
    /// Two translational bumps with cold internal modes.
    Relaxation,
}

type Profile = Box<dyn Fn(&Vec3, f64) -> f64 + Send + Sync>;

impl Scenario {
    /// The six-member test family.
    pub const FAMILY: [Scenario; 6] = [
        Scenario::Maxwellian,
        Scenario::ShiftedMaxwellian,
        Scenario::TwoBump,
        Scenario::AnisotropicGaussian,
        Scenario::IWeightedGaussian,
        Scenario::CompactPlateau,
    ];

    pub const ALL: [Scenario; 8] = [
        Scenario::Maxwellian,
        Scenario::ShiftedMaxwellian,
        Scenario::TwoBump,
        Scenario::AnisotropicGaussian,
        Scenario::IWeightedGaussian,
        Scenario::CompactPlateau,
        Scenario::Equilibrium,
        Scenario::Relaxation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Maxwellian => "maxwellian",
            Scenario::ShiftedMaxwellian => "shifted_maxwellian",
            Scenario::TwoBump => "two_bump",
            Scenario::AnisotropicGaussian => "anisotropic_gaussian",
            Scenario::IWeightedGaussian => "i_weighted_gaussian",
            Scenario::CompactPlateau => "compact_plateau",
            Scenario::Equilibrium => "equilibrium",
            Scenario::Relaxation => "relaxation",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{name}'")))
    }

    /// Unnormalised profile of the scenario.
    fn profile(self, params: &ModelParams) -> Profile {
        let m = params.m;
        let alpha = params.alpha;
        let ia = move |i: f64| if i > 0.0 { i.powf(alpha) } else { 0.0 };
        match self {
            Scenario::Maxwellian | Scenario::Equilibrium => {
                Box::new(polyatomic_maxwellian(1.0, Vec3::zeros(), 1.0, params))
            }
            Scenario::ShiftedMaxwellian => Box::new(polyatomic_maxwellian(
                1.0,
                Vec3::new(0.5, -0.3, 0.2),
                0.8,
                params,
            )),
            Scenario::TwoBump => {
                let a = polyatomic_maxwellian(0.5, Vec3::new(1.2, 0.0, 0.0), 0.5, params);
                let b = polyatomic_maxwellian(0.5, Vec3::new(-1.2, 0.0, 0.0), 0.5, params);
                Box::new(move |v, i| a(v, i) + b(v, i))
            }
            Scenario::Relaxation => Box::new(move |v, i| {
                let bump = |c: f64| (-m * ((v[0] - c).powi(2) + v[1] * v[1] + v[2] * v[2])).exp();
                ia(i) * (-i / 0.25).exp() * (bump(1.2) + bump(-1.2))
            }),
            Scenario::AnisotropicGaussian => Box::new(move |v, i| {
                let q = v[0] * v[0] / 1.5 + v[1] * v[1] / 0.7 + v[2] * v[2];
                ia(i) * (-0.5 * m * q - i / 1.2).exp()
            }),
            Scenario::IWeightedGaussian => Box::new(move |v, i| {
                ia(i) * (1.0 + i * i) * (-0.5 * m * v.norm_squared() - 1.3 * i).exp()
            }),
            Scenario::CompactPlateau => Box::new(move |v, i| {
                let taper = |x: f64, a: f64, b: f64| {
                    if x <= a {
                        1.0
                    } else if x >= b {
                        0.0
                    } else {
                        (0.5 * std::f64::consts::PI * (x - a) / (b - a))
                            .cos()
                            .powi(2)
                    }
                };
                ia(i) * taper(v.norm(), 1.0, 2.5) * taper(i, 1.5, 4.0)
            }),
        }
    }

    /// Samples the scenario on `grid`, normalised to unit mass on the grid.
    pub fn field(self, grid: Arc<PhaseGrid>, params: &ModelParams) -> Result<DistributionField> {
        let profile = self.profile(params);
        let f = DistributionField::from_fn(grid, |v, i| profile(v, i))?;
        let mass: f64 = f.values().iter().sum::<f64>() * f.grid().weight();
        if !(mass > 0.0) {
            return Err(Error::Degenerate(format!(
                "scenario '{}' has no mass on this grid",
                self.name()
            )));
        }
        f.scaled(1.0 / mass)
    }
}
