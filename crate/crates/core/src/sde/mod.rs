//! Euler–Maruyama integration of Itô SDEs with diagonal noise.
//!
//! ```text
//! X_{n+1} = X_n + f(X_n, ξ, t_n) Δt + g(X_n, ξ, t_n) ⊙ ΔB_n,   ΔB_n ~ N(0, Δt I)
//! ```
//!
//! The same integrator produces ground-truth data (true model) and the
//! physics-only baseline (ablated known model). Noise for path `(i, j)` is
//! drawn from its own stream, so two models integrated with the same seed
//! see identical Brownian increments.

mod dataset;

pub use dataset::TrajectoryDataset;

use std::sync::Arc;

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{DpcError, Result};
use crate::rng::{self, Domain};

/// Drift and diffusion of an SDE `dX = f(X, ξ, t) dt + g(X, ξ, t) ⊙ dB`.
///
/// Implementations must be deterministic; all randomness enters through
/// `ξ` and the Brownian increments.
pub trait SdeModel: Send + Sync {
    fn label(&self) -> &str;
    fn dim_state(&self) -> usize;
    fn dim_params(&self) -> usize;

    fn drift(&self, x: &[f64], params: &[f64], t: f64, out: &mut [f64]);
    fn diffusion(&self, x: &[f64], params: &[f64], t: f64, out: &mut [f64]);

    /// Row-major `d × d` Jacobian of the drift with respect to the state.
    fn drift_jacobian(&self, x: &[f64], params: &[f64], t: f64, jac: &mut [f64]) {
        central_difference_jacobian(|x, out| self.drift(x, params, t, out), x, jac);
    }

    /// Row-major `d × d` Jacobian of the diffusion with respect to the state.
    fn diffusion_jacobian(&self, x: &[f64], params: &[f64], t: f64, jac: &mut [f64]) {
        central_difference_jacobian(|x, out| self.diffusion(x, params, t, out), x, jac);
    }
}

pub(crate) fn central_difference_jacobian(
    f: impl Fn(&[f64], &mut [f64]),
    x: &[f64],
    jac: &mut [f64],
) {
    let d = x.len();
    let mut xp = x.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for j in 0..d {
        let h = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        f(&xp, &mut plus);
        xp[j] = x[j] - h;
        f(&xp, &mut minus);
        xp[j] = x[j];
        for i in 0..d {
            jac[i * d + j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
}

type CoefficientFn = dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync;

/// An [`SdeModel`] assembled from closures. Jacobians fall back to central
/// differences.
#[derive(Clone)]
pub struct FnSde {
    label: String,
    dim_state: usize,
    dim_params: usize,
    drift: Arc<CoefficientFn>,
    diffusion: Arc<CoefficientFn>,
}

impl FnSde {
    pub fn new(
        label: impl Into<String>,
        dim_state: usize,
        dim_params: usize,
        drift: impl Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnSde {
            label: label.into(),
            dim_state,
            dim_params,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        }
    }
}

impl std::fmt::Debug for FnSde {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnSde")
            .field("label", &self.label)
            .field("dim_state", &self.dim_state)
            .field("dim_params", &self.dim_params)
            .finish()
    }
}

impl SdeModel for FnSde {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim_state(&self) -> usize {
        self.dim_state
    }
    fn dim_params(&self) -> usize {
        self.dim_params
    }
    fn drift(&self, x: &[f64], params: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, params, t, out)
    }
    fn diffusion(&self, x: &[f64], params: &[f64], t: f64, out: &mut [f64]) {
        (self.diffusion)(x, params, t, out)
    }
}

/// `f ≡ 0`, `g ≡ 0`. The physics of the data-only baseline.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ZeroSde {
    pub dim_state: usize,
    pub dim_params: usize,
}

impl SdeModel for ZeroSde {
    fn label(&self) -> &str {
        "zero"
    }
    fn dim_state(&self) -> usize {
        self.dim_state
    }
    fn dim_params(&self) -> usize {
        self.dim_params
    }
    fn drift(&self, _: &[f64], _: &[f64], _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn diffusion(&self, _: &[f64], _: &[f64], _: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
    fn drift_jacobian(&self, _: &[f64], _: &[f64], _: f64, jac: &mut [f64]) {
        jac.fill(0.0);
    }
    fn diffusion_jacobian(&self, _: &[f64], _: &[f64], _: f64, jac: &mut [f64]) {
        jac.fill(0.0);
    }
}

/// Initial condition of a simulation.
#[derive(Clone)]
pub enum InitialState {
    Fixed(Vec<f64>),
    /// Initial state computed from the parameter realization.
    FromParams(Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>),
}

impl InitialState {
    pub fn resolve(&self, params: &[f64]) -> Vec<f64> {
        match self {
            InitialState::Fixed(x0) => x0.clone(),
            InitialState::FromParams(f) => f(params),
        }
    }
}

impl std::fmt::Debug for InitialState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialState::Fixed(x0) => f.debug_tuple("Fixed").field(x0).finish(),
            InitialState::FromParams(_) => f.write_str("FromParams(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub initial_state: InitialState,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DpcError::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(DpcError::config("n_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Source of parameter realizations `ξ`.
pub trait ParamSampler {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
}

/// Independent uniform marginals on a box.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UniformBox {
    pub bounds: Vec<(f64, f64)>,
}

impl ParamSampler for UniformBox {
    fn dim(&self) -> usize {
        self.bounds.len()
    }
    fn sample(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// Fill `db` with `√dt · N(0, 1)` draws.
pub fn brownian_increments(rng: &mut impl Rng, dt: f64, db: &mut [f64]) {
    let sd = dt.sqrt();
    for v in db.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = sd * z;
    }
}

/// Reusable buffers for repeated Euler–Maruyama steps.
pub(crate) struct Stepper {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl Stepper {
    pub(crate) fn new(dim: usize) -> Self {
        Stepper {
            drift: vec![0.0; dim],
            diffusion: vec![0.0; dim],
        }
    }

    /// Advance `state` in place; returns `false` if any entry became non-finite.
    pub(crate) fn step(
        &mut self,
        model: &dyn SdeModel,
        state: &mut [f64],
        params: &[f64],
        t: f64,
        dt: f64,
        db: &[f64],
    ) -> bool {
        model.drift(state, params, t, &mut self.drift);
        model.diffusion(state, params, t, &mut self.diffusion);
        let mut finite = true;
        for k in 0..state.len() {
            state[k] = state[k] + self.drift[k] * dt + self.diffusion[k] * db[k];
            finite &= state[k].is_finite();
        }
        finite
    }
}

/// One Euler–Maruyama step with caller-supplied Brownian increment `db`.
pub fn euler_maruyama_step(
    model: &dyn SdeModel,
    state: &[f64],
    params: &[f64],
    t: f64,
    dt: f64,
    db: &[f64],
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(DpcError::Contract(format!("dt must be positive, got {dt}")));
    }
    check_len("state", model.dim_state(), state.len())?;
    check_len("params", model.dim_params(), params.len())?;
    check_len("brownian increment", model.dim_state(), db.len())?;
    let mut next = state.to_vec();
    if !Stepper::new(state.len()).step(model, &mut next, params, t, dt, db) {
        return Err(DpcError::Divergence {
            sample: 0,
            replication: 0,
            step: (t / dt).round() as usize,
        });
    }
    Ok(next)
}

fn check_len(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DpcError::Dimension {
            context: context.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}

/// Global path index used to select the Brownian stream of `(sample, replication)`.
pub fn path_index(sample: usize, replication: usize, n_replications: usize) -> u64 {
    (sample * n_replications + replication) as u64
}

/// Draw `N` parameter realizations and integrate `m` independent paths for each.
pub fn simulate_ensemble(
    model: &dyn SdeModel,
    cfg: &SimConfig,
    sampler: &dyn ParamSampler,
    n_samples: usize,
    n_replications: usize,
) -> Result<TrajectoryDataset> {
    check_len("parameter sampler", model.dim_params(), sampler.dim())?;
    let k = model.dim_params();
    let mut params = Array2::zeros((n_samples, k));
    for i in 0..n_samples {
        let mut rng = rng::stream(cfg.seed, Domain::Params, i as u64);
        let xi = sampler.sample(&mut rng);
        params.row_mut(i).assign(&ndarray::ArrayView1::from(&xi));
    }
    physics_only_rollout(model, cfg, &params, n_replications)
}

/// Integrate `m` paths for each caller-fixed parameter row.
pub fn physics_only_rollout(
    model: &dyn SdeModel,
    cfg: &SimConfig,
    params: &Array2<f64>,
    n_replications: usize,
) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    if n_replications == 0 {
        return Err(DpcError::config("n_replications must be at least 1"));
    }
    check_len("params", model.dim_params(), params.ncols())?;
    let d = model.dim_state();
    let n = params.nrows();
    let nt = cfg.n_steps;
    let mut traj = Array4::zeros((n, n_replications, nt + 1, d));
    let mut stepper = Stepper::new(d);
    let mut db = vec![0.0; d];
    let mut negative_paths = 0usize;
    for i in 0..n {
        let xi = params.row(i).to_vec();
        let x0 = cfg.initial_state.resolve(&xi);
        check_len("initial state", d, x0.len())?;
        for j in 0..n_replications {
            let mut rng = rng::stream(cfg.seed, Domain::Brownian, path_index(i, j, n_replications));
            let mut x = x0.clone();
            let mut went_negative = false;
            traj.slice_mut(ndarray::s![i, j, 0, ..])
                .assign(&ndarray::ArrayView1::from(&x));
            for step in 0..nt {
                brownian_increments(&mut rng, cfg.dt, &mut db);
                let t = step as f64 * cfg.dt;
                if !stepper.step(model, &mut x, &xi, t, cfg.dt, &db) {
                    return Err(DpcError::Divergence {
                        sample: i,
                        replication: j,
                        step: step + 1,
                    });
                }
                went_negative |= x.iter().any(|&v| v < 0.0);
                traj.slice_mut(ndarray::s![i, j, step + 1, ..])
                    .assign(&ndarray::ArrayView1::from(&x));
            }
            negative_paths += usize::from(went_negative);
        }
    }
    if negative_paths > 0 && model.label().starts_with("sir") {
        log::warn!(
            "{}: {negative_paths} of {} paths left the nonnegative orthant",
            model.label(),
            n * n_replications
        );
    }
    Ok(TrajectoryDataset {
        label: model.label().to_string(),
        seed: cfg.seed,
        dt: cfg.dt,
        params: params.clone(),
        trajectories: traj,
    })
}

/// Samples of a scalar quantity of interest at selected steps, for one
/// parameter point, without storing whole trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiEnsemble {
    /// `samples[k]` holds the finite QoI values at `steps[k]`.
    pub steps: Vec<usize>,
    pub samples: Vec<Vec<f64>>,
    /// Paths that became non-finite before the last requested step.
    pub diverged: usize,
}

/// `m` paths from `x0` at parameter `params`, observed through `qoi` at
/// each of `steps`. Path `j` uses the Brownian stream of `(0, j)`, exactly as
/// [`physics_only_rollout`] for a single parameter row. Diverged paths are
/// dropped from later observations instead of aborting the ensemble.
#[allow(clippy::too_many_arguments)]
pub fn qoi_ensemble(
    model: &dyn SdeModel,
    dt: f64,
    params: &[f64],
    x0: &[f64],
    m: usize,
    steps: &[usize],
    qoi: impl Fn(&[f64]) -> f64,
    seed: u64,
) -> Result<QoiEnsemble> {
    check_len("params", model.dim_params(), params.len())?;
    check_len("initial state", model.dim_state(), x0.len())?;
    let last = steps.iter().copied().max().unwrap_or(0);
    let mut samples = vec![Vec::with_capacity(m); steps.len()];
    let mut stepper = Stepper::new(x0.len());
    let mut db = vec![0.0; x0.len()];
    let mut diverged = 0;
    for j in 0..m {
        let mut rng = rng::stream(seed, Domain::Brownian, path_index(0, j, m));
        let mut x = x0.to_vec();
        let mut record = |step: usize, x: &[f64]| {
            for (k, &s) in steps.iter().enumerate() {
                if s == step {
                    samples[k].push(qoi(x));
                }
            }
        };
        record(0, &x);
        for step in 0..last {
            brownian_increments(&mut rng, dt, &mut db);
            if !stepper.step(model, &mut x, params, step as f64 * dt, dt, &db) {
                diverged += 1;
                break;
            }
            record(step + 1, &x);
        }
    }
    Ok(QoiEnsemble { steps: steps.to_vec(), samples, diverged })
}

/// Count paths that diverge instead of failing on the first one.
pub fn count_divergences(
    model: &dyn SdeModel,
    cfg: &SimConfig,
    params: &Array2<f64>,
    n_replications: usize,
) -> usize {
    let d = model.dim_state();
    let mut stepper = Stepper::new(d);
    let mut db = vec![0.0; d];
    let mut diverged = 0;
    for i in 0..params.nrows() {
        let xi = params.row(i).to_vec();
        let x0 = cfg.initial_state.resolve(&xi);
        for j in 0..n_replications {
            let mut rng = rng::stream(cfg.seed, Domain::Brownian, path_index(i, j, n_replications));
            let mut x = x0.clone();
            for step in 0..cfg.n_steps {
                brownian_increments(&mut rng, cfg.dt, &mut db);
                if !stepper.step(model, &mut x, &xi, step as f64 * cfg.dt, cfg.dt, &db) {
                    diverged += 1;
                    break;
                }
            }
        }
    }
    diverged
}
