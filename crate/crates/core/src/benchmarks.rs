//! The four stochastic benchmarks, their ablated "known physics" variants,
//! parameter distributions and default training settings.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::LrSchedule;
use crate::error::{DpcError, Result};
use crate::sde::{InitialState, SdeModel, UniformBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkName {
    BlackScholes,
    ModifiedOu,
    Sir,
    DuffingVdp,
}

impl BenchmarkName {
    pub const ALL: [BenchmarkName; 4] = [
        BenchmarkName::BlackScholes,
        BenchmarkName::ModifiedOu,
        BenchmarkName::Sir,
        BenchmarkName::DuffingVdp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkName::BlackScholes => "black_scholes",
            BenchmarkName::ModifiedOu => "modified_ou",
            BenchmarkName::Sir => "sir",
            BenchmarkName::DuffingVdp => "duffing_vdp",
        }
    }
}

impl fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkName {
    type Err = DpcError;
    fn from_str(s: &str) -> Result<Self> {
        BenchmarkName::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| DpcError::config(format!("unknown benchmark '{s}'")))
    }
}

/// Which part of the physics is missing from the known model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Drift,
    Diffusion,
    Both,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Drift, Regime::Diffusion, Regime::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Drift => "drift",
            Regime::Diffusion => "diffusion",
            Regime::Both => "both",
        }
    }

    pub fn ablation(self) -> Ablation {
        Ablation {
            drift: matches!(self, Regime::Drift | Regime::Both),
            diffusion: matches!(self, Regime::Diffusion | Regime::Both),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = DpcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drift" | "drift_missing" => Ok(Regime::Drift),
            "diffusion" | "diffusion_missing" => Ok(Regime::Diffusion),
            "both" | "both_missing" => Ok(Regime::Both),
            _ => Err(DpcError::config(format!(
                "unknown regime '{s}' (expected drift, diffusion or both)"
            ))),
        }
    }
}

/// Terms removed from the true model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub drift: bool,
    pub diffusion: bool,
}

/// Fixed physical constants. Defaults are the published benchmark values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constants {
    /// Modified OU noise nonlinearity ν.
    pub ou_nu: f64,
    pub sir_alpha: f64,
    pub sir_beta: f64,
    pub sir_gamma: f64,
    pub sir_total: f64,
    pub dvdp_alpha: f64,
    pub dvdp_sigma: f64,
    /// Duffing–Van der Pol initial state `(X₀, Y₀)`; not published, assumed.
    pub dvdp_initial: [f64; 2],
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            ou_nu: 0.2,
            sir_alpha: 0.01,
            sir_beta: 0.5,
            sir_gamma: 0.5,
            sir_total: 2000.0,
            dvdp_alpha: 100.0,
            dvdp_sigma: 1e4,
            dvdp_initial: [1.0, 0.0],
        }
    }
}

/// Scalar quantity of interest extracted from the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qoi {
    Component(usize),
    AbsComponent(usize),
}

impl Qoi {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Qoi::Component(i) => x[i],
            Qoi::AbsComponent(i) => x[i].abs(),
        }
    }

    pub fn component(self) -> usize {
        match self {
            Qoi::Component(i) | Qoi::AbsComponent(i) => i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    Fixed(Vec<f64>),
    /// `(S₀, I₀, N − S₀ − I₀)` from `ξ = (S₀, I₀)`.
    SirFromParams,
}

/// A benchmark SDE with optional ablations. The true model has no ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkModel {
    pub name: BenchmarkName,
    pub constants: Constants,
    pub ablation: Ablation,
    label: String,
}

impl BenchmarkModel {
    pub fn new(name: BenchmarkName, constants: Constants, ablation: Ablation) -> Self {
        let suffix = match (ablation.drift, ablation.diffusion) {
            (false, false) => "true",
            (true, false) => "known_drift_missing",
            (false, true) => "known_diffusion_missing",
            (true, true) => "known_both_missing",
        };
        BenchmarkModel {
            name,
            constants,
            ablation,
            label: format!("{name}/{suffix}"),
        }
    }
}

impl SdeModel for BenchmarkModel {
    fn label(&self) -> &str {
        &self.label
    }

    fn dim_state(&self) -> usize {
        match self.name {
            BenchmarkName::BlackScholes | BenchmarkName::ModifiedOu => 1,
            BenchmarkName::Sir => 3,
            BenchmarkName::DuffingVdp => 2,
        }
    }

    fn dim_params(&self) -> usize {
        2
    }

    fn drift(&self, x: &[f64], p: &[f64], _t: f64, out: &mut [f64]) {
        let c = &self.constants;
        let missing = self.ablation.drift;
        match self.name {
            BenchmarkName::BlackScholes => {
                out[0] = if missing { 1.0 } else { p[0] * x[0] };
            }
            BenchmarkName::ModifiedOu => {
                out[0] = if missing { 1.0 } else { p[0] - x[0] };
            }
            BenchmarkName::Sir => {
                let (s, i) = (x[0], x[1]);
                let infection = c.sir_beta * s * i;
                out[0] = -infection;
                out[1] = if missing { 0.0 } else { infection } - c.sir_gamma * i;
                out[2] = c.sir_gamma * i;
            }
            BenchmarkName::DuffingVdp => {
                let (xx, y) = (x[0], x[1]);
                let damping = if missing { p[0] * y } else { p[0] * (1.0 - xx * xx) * y };
                out[0] = y;
                out[1] = damping + p[1] * xx - c.dvdp_alpha * xx * xx * xx;
            }
        }
    }

    fn diffusion(&self, x: &[f64], p: &[f64], _t: f64, out: &mut [f64]) {
        let c = &self.constants;
        let missing = self.ablation.diffusion;
        match self.name {
            BenchmarkName::BlackScholes => {
                out[0] = if missing { 1.0 } else { p[1] * x[0] };
            }
            BenchmarkName::ModifiedOu => {
                out[0] = if missing { 1.0 } else { (c.ou_nu * x[0] + 1.0) * p[1] };
            }
            BenchmarkName::Sir => {
                out[0] = 0.0;
                out[1] = if missing { 1.0 } else { c.sir_alpha * x[1] };
                out[2] = 0.0;
            }
            BenchmarkName::DuffingVdp => {
                out[0] = 0.0;
                out[1] = if missing { 1.0 } else { c.dvdp_sigma * x[0] };
            }
        }
    }

    fn drift_jacobian(&self, x: &[f64], p: &[f64], _t: f64, jac: &mut [f64]) {
        let c = &self.constants;
        let missing = self.ablation.drift;
        jac.fill(0.0);
        match self.name {
            BenchmarkName::BlackScholes => {
                jac[0] = if missing { 0.0 } else { p[0] };
            }
            BenchmarkName::ModifiedOu => {
                jac[0] = if missing { 0.0 } else { -1.0 };
            }
            BenchmarkName::Sir => {
                let (s, i) = (x[0], x[1]);
                let b = c.sir_beta;
                jac[0] = -b * i;
                jac[1] = -b * s;
                if !missing {
                    jac[3] = b * i;
                    jac[4] = b * s;
                }
                jac[4] -= c.sir_gamma;
                jac[7] = c.sir_gamma;
            }
            BenchmarkName::DuffingVdp => {
                let (xx, y) = (x[0], x[1]);
                jac[1] = 1.0;
                let stiffness = p[1] - 3.0 * c.dvdp_alpha * xx * xx;
                if missing {
                    jac[2] = stiffness;
                    jac[3] = p[0];
                } else {
                    jac[2] = -2.0 * p[0] * xx * y + stiffness;
                    jac[3] = p[0] * (1.0 - xx * xx);
                }
            }
        }
    }

    fn diffusion_jacobian(&self, _x: &[f64], p: &[f64], _t: f64, jac: &mut [f64]) {
        let c = &self.constants;
        jac.fill(0.0);
        if self.ablation.diffusion {
            return;
        }
        match self.name {
            BenchmarkName::BlackScholes => jac[0] = p[1],
            BenchmarkName::ModifiedOu => jac[0] = c.ou_nu * p[1],
            BenchmarkName::Sir => jac[4] = c.sir_alpha,
            BenchmarkName::DuffingVdp => jac[2] = c.dvdp_sigma,
        }
    }
}

/// Fully specified benchmark: physics, distributions and default settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: BenchmarkName,
    pub constants: Constants,
    pub param_dists: UniformBox,
    pub initial_condition: InitialCondition,
    pub qoi: Qoi,
    /// State component receiving the neural correction.
    pub corrected_component: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub n_samples: usize,
    pub n_replications: usize,
    pub lr_drift: LrSchedule,
    pub lr_diffusion: LrSchedule,
}

impl BenchmarkSpec {
    pub fn true_model(&self) -> BenchmarkModel {
        BenchmarkModel::new(self.name, self.constants.clone(), Ablation::default())
    }

    pub fn known_model(&self, regime: Regime) -> BenchmarkModel {
        BenchmarkModel::new(self.name, self.constants.clone(), regime.ablation())
    }

    pub fn dim_state(&self) -> usize {
        self.true_model().dim_state()
    }

    pub fn dim_params(&self) -> usize {
        self.param_dists.bounds.len()
    }

    pub fn lr_schedule(&self, regime: Regime) -> LrSchedule {
        match regime {
            Regime::Diffusion => self.lr_diffusion,
            Regime::Drift | Regime::Both => self.lr_drift,
        }
    }

    pub fn initial_state(&self) -> InitialState {
        match &self.initial_condition {
            InitialCondition::Fixed(x0) => InitialState::Fixed(x0.clone()),
            InitialCondition::SirFromParams => {
                let total = self.constants.sir_total;
                InitialState::FromParams(Arc::new(move |p: &[f64]| {
                    vec![p[0], p[1], total - p[0] - p[1]]
                }))
            }
        }
    }

    /// Training window length in time units.
    pub fn window(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

pub fn make_benchmark(name: BenchmarkName) -> BenchmarkSpec {
    make_benchmark_with(name, Constants::default())
}

pub fn make_benchmark_with(name: BenchmarkName, constants: Constants) -> BenchmarkSpec {
    let decay = |initial, factor| LrSchedule::step_decay(initial, factor, 50);
    match name {
        BenchmarkName::BlackScholes => BenchmarkSpec {
            name,
            param_dists: UniformBox { bounds: vec![(0.0, 0.1), (0.0, 0.4)] },
            initial_condition: InitialCondition::Fixed(vec![1.0]),
            qoi: Qoi::Component(0),
            corrected_component: 0,
            dt: 1e-3,
            n_steps: 100,
            n_samples: 40,
            n_replications: 50,
            lr_drift: LrSchedule::constant(1e-5),
            lr_diffusion: LrSchedule::constant(1e-5),
            constants,
        },
        BenchmarkName::ModifiedOu => BenchmarkSpec {
            name,
            param_dists: UniformBox { bounds: vec![(0.9, 2.0), (0.1, 1.0)] },
            initial_condition: InitialCondition::Fixed(vec![1.0]),
            qoi: Qoi::Component(0),
            corrected_component: 0,
            dt: 1e-3,
            n_steps: 100,
            n_samples: 40,
            n_replications: 50,
            lr_drift: decay(1e-4, 0.95),
            lr_diffusion: decay(1e-4, 0.95),
            constants,
        },
        BenchmarkName::Sir => BenchmarkSpec {
            name,
            param_dists: UniformBox { bounds: vec![(1200.0, 1800.0), (20.0, 200.0)] },
            initial_condition: InitialCondition::SirFromParams,
            qoi: Qoi::Component(1),
            corrected_component: 1,
            dt: 1e-3,
            n_steps: 100,
            n_samples: 40,
            n_replications: 50,
            lr_drift: decay(1e-6, 0.9),
            lr_diffusion: decay(1e-6, 0.9),
            constants,
        },
        BenchmarkName::DuffingVdp => BenchmarkSpec {
            name,
            param_dists: UniformBox { bounds: vec![(0.1, 0.5), (5.0, 50.0)] },
            initial_condition: InitialCondition::Fixed(constants.dvdp_initial.to_vec()),
            qoi: Qoi::AbsComponent(0),
            corrected_component: 1,
            dt: 1e-3,
            n_steps: 1000,
            n_samples: 40,
            n_replications: 50,
            lr_drift: decay(1e-6, 0.95),
            lr_diffusion: decay(1e-5, 0.95),
            constants,
        },
    }
}
