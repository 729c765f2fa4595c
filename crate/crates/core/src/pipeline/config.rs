//! Run configuration: one TOML file per run, every field defaulting to the
//! published setting for the chosen benchmark.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmarks::{make_benchmark, BenchmarkName, BenchmarkSpec, Regime};
use crate::cmmd::{KernelParams, DEFAULT_BETA_IN, DEFAULT_BETA_OUT, DEFAULT_LAMBDA};
use crate::dpc::TrainConfig;
use crate::error::{DpcError, Result};
use crate::eval::EvalConfig;

/// Data-generation block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Parameter realizations `N`.
    pub n_samples: usize,
    /// Replications per realization `m`.
    pub n_replications: usize,
    /// Steps in the training window `Nt`.
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Initial values of the learnable kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelInit {
    pub lambda: f64,
    pub beta_in: f64,
    pub beta_out: f64,
}

impl KernelInit {
    pub fn params(&self) -> KernelParams {
        KernelParams::new(self.lambda, self.beta_in, self.beta_out)
    }
}

impl Default for KernelInit {
    fn default() -> Self {
        KernelInit { lambda: DEFAULT_LAMBDA, beta_in: DEFAULT_BETA_IN, beta_out: DEFAULT_BETA_OUT }
    }
}

/// Sample-size study settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Training-set sizes; must include the reference size 40.
    pub sample_sizes: Vec<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig { sample_sizes: vec![10, 20, 30, 40] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: BenchmarkName,
    pub regime: Regime,
    /// Save a checkpoint every this many epochs (and at the end).
    pub checkpoint_every: usize,
    pub data: DataConfig,
    pub kernel: KernelInit,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub convergence: ConvergenceConfig,
}

/// Epoch budget of the default runs, sized for a desktop CPU.
fn default_epochs(name: BenchmarkName) -> usize {
    match name {
        BenchmarkName::BlackScholes | BenchmarkName::ModifiedOu | BenchmarkName::Sir => 50,
        BenchmarkName::DuffingVdp => 10,
    }
}

/// Merge `over` into `base`, descending into tables.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl RunConfig {
    /// Published settings for a benchmark and regime.
    pub fn paper(benchmark: BenchmarkName, regime: Regime) -> RunConfig {
        let spec = make_benchmark(benchmark);
        RunConfig {
            benchmark,
            regime,
            checkpoint_every: 10,
            data: DataConfig {
                n_samples: spec.n_samples,
                n_replications: spec.n_replications,
                n_steps: spec.n_steps,
                dt: spec.dt,
                seed: 0,
            },
            kernel: KernelInit::default(),
            train: TrainConfig { epochs: default_epochs(benchmark), lr: spec.lr_schedule(regime), ..TrainConfig::default() },
            eval: EvalConfig::default(),
            convergence: ConvergenceConfig::default(),
        }
    }

    /// Parse a TOML document. Missing fields take the published defaults
    /// of the document's benchmark and regime (Black–Scholes, drift if
    /// unspecified); unknown fields are rejected.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let user: toml::Table = toml::from_str(text).map_err(|e| DpcError::config(e.to_string()))?;
        let field = |key: &str, default: &str| -> Result<String> {
            match user.get(key) {
                None => Ok(default.to_string()),
                Some(toml::Value::String(s)) => Ok(s.clone()),
                Some(other) => Err(DpcError::config(format!("'{key}' must be a string, got {other}"))),
            }
        };
        let benchmark: BenchmarkName = field("benchmark", "black_scholes")?.parse()?;
        let regime: Regime = field("regime", "drift")?.parse()?;
        let mut merged = toml::Table::try_from(RunConfig::paper(benchmark, regime))
            .map_err(|e| DpcError::config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| DpcError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| DpcError::config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Use `seed` for data, training and evaluation alike (their random
    /// streams are separated by domain).
    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.data.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n_samples < 2 || d.n_replications == 0 || d.n_steps == 0 {
            return Err(DpcError::config("data block needs N ≥ 2, m ≥ 1 and Nt ≥ 1"));
        }
        if !(d.dt > 0.0 && d.dt.is_finite()) {
            return Err(DpcError::config(format!("time step must be positive, got {}", d.dt)));
        }
        let k = &self.kernel;
        if [k.lambda, k.beta_in, k.beta_out].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(DpcError::config("kernel hyperparameters must be positive"));
        }
        if self.checkpoint_every == 0 {
            return Err(DpcError::config("checkpoint_every must be at least 1"));
        }
        self.train.validate()?;
        self.eval.validate()
    }

    /// The benchmark with this run's window and sample sizes.
    pub fn spec(&self) -> BenchmarkSpec {
        let mut spec = make_benchmark(self.benchmark);
        spec.dt = self.data.dt;
        spec.n_steps = self.data.n_steps;
        spec.n_samples = self.data.n_samples;
        spec.n_replications = self.data.n_replications;
        spec
    }
}
