//! The Deep Physics Corrector: an Euler–Maruyama cell whose known drift and
//! diffusion are corrected by a generative network,
//!
//! ```text
//! [f_p, g_p] = NN(x̂, ξ̂, z; θ),   z ~ N(0, I₁₀) fresh every step
//! X_{t+1} = X_t + (f_k + f_p)·Δt + (g_k + g_p) ⊙ ΔB_t
//! ```
//!
//! where `x̂`, `ξ̂` are standardized inputs and the corrections act on the
//! state components where the known physics is incomplete.

mod train;

pub use train::{
    batch_loss, load_checkpoint, save_checkpoint, train, Checkpoint, EpochRecord, TrainConfig,
    Trainer,
};

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mlp, MlpVars, Tape, Var, PAPER_HIDDEN};
use crate::benchmarks::{BenchmarkModel, BenchmarkSpec, Qoi, Regime};
use crate::cmmd::KernelParams;
use crate::error::{DpcError, Result};
use crate::rng::{self, Domain};
use crate::sde::{brownian_increments, path_index, QoiEnsemble, SdeModel, TrajectoryDataset, ZeroSde};

/// Dimension of the latent input `z`.
pub const LATENT_DIM: usize = 10;

/// The known part of the dynamics.
#[derive(Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Physics {
    Benchmark(BenchmarkModel),
    /// No physics at all: the data-only baseline.
    Zero(ZeroSde),
    /// Any in-memory model; cannot be written to a checkpoint.
    #[serde(skip)]
    Custom(Arc<dyn SdeModel>),
}

impl Physics {
    pub fn model(&self) -> &dyn SdeModel {
        match self {
            Physics::Benchmark(m) => m,
            Physics::Zero(m) => m,
            Physics::Custom(m) => m.as_ref(),
        }
    }
}

impl std::fmt::Debug for Physics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("Physics").field(&self.model().label()).finish()
    }
}

/// Standardization of network inputs and de-standardization of its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub param_mean: Vec<f64>,
    pub param_std: Vec<f64>,
    /// Multiplies the drift head, one entry per corrected component.
    pub drift_scale: Vec<f64>,
    /// Multiplies the diffusion head, one entry per corrected component.
    pub diffusion_scale: Vec<f64>,
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for &v in values {
        n += 1.0;
        let delta = v - mean;
        mean += delta / n;
        m2 += delta * (v - mean);
    }
    let std = if n > 1.0 { (m2 / (n - 1.0)).sqrt() } else { 0.0 };
    // a constant input carries no information; leave it unscaled
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Scaling {
    /// Dataset statistics. A unit head output moves the state by one
    /// standard deviation per time step: drift heads are scaled by `σ_x / Δt`
    /// and diffusion heads by `σ_x / √Δt`.
    pub fn fit(dataset: &TrajectoryDataset, corrected: &[usize]) -> Scaling {
        let d = dataset.dim_state();
        let (state_mean, state_std): (Vec<f64>, Vec<f64>) = (0..d)
            .map(|c| mean_std(dataset.trajectories.index_axis(Axis(3), c).iter()))
            .unzip();
        let (param_mean, param_std) = (0..dataset.dim_params())
            .map(|c| mean_std(dataset.params.column(c).iter()))
            .unzip();
        let dt = dataset.dt;
        Scaling {
            drift_scale: corrected.iter().map(|&c| state_std[c] / dt).collect(),
            diffusion_scale: corrected.iter().map(|&c| state_std[c] / dt.sqrt()).collect(),
            state_mean,
            state_std,
            param_mean,
            param_std,
        }
    }

    /// No standardization and unit heads.
    pub fn identity(dim_state: usize, dim_params: usize, n_corrected: usize) -> Scaling {
        Scaling {
            state_mean: vec![0.0; dim_state],
            state_std: vec![1.0; dim_state],
            param_mean: vec![0.0; dim_params],
            param_std: vec![1.0; dim_params],
            drift_scale: vec![1.0; n_corrected],
            diffusion_scale: vec![1.0; n_corrected],
        }
    }

    fn row(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    fn neg_state_mean(&self) -> Array2<f64> {
        Self::row(&self.state_mean).mapv(|v| -v)
    }

    fn inv_state_std(&self) -> Array2<f64> {
        Self::row(&self.state_std).mapv(|v| 1.0 / v)
    }

    /// `(x − μ)·σ⁻¹` row-wise.
    pub fn standardize_states(&self, x: &Array2<f64>) -> Array2<f64> {
        (x + &self.neg_state_mean()) * &self.inv_state_std()
    }

    pub fn standardize_params(&self, p: &Array2<f64>) -> Array2<f64> {
        let neg = Self::row(&self.param_mean).mapv(|v| -v);
        let inv = Self::row(&self.param_std).mapv(|v| 1.0 / v);
        (p + &neg) * &inv
    }
}

/// A corrected SDE: known physics plus a generative correction network and
/// the kernel hyperparameters of its training loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpcModel {
    pub physics: Physics,
    pub net: Mlp,
    pub kernel: KernelParams,
    pub latent_dim: usize,
    /// State components receiving `f_p` and `g_p`.
    pub corrected: Vec<usize>,
    pub scaling: Scaling,
    pub dt: f64,
    /// Steps in the training window.
    pub window_steps: usize,
}

impl DpcModel {
    /// He-initialized hidden layers and a zero output layer, so the
    /// untrained model reproduces the known physics exactly.
    pub fn new(
        physics: Physics,
        corrected: Vec<usize>,
        hidden: &[usize],
        scaling: Scaling,
        dt: f64,
        window_steps: usize,
        rng: &mut impl Rng,
    ) -> Result<DpcModel> {
        let model = physics.model();
        let (d, k) = (model.dim_state(), model.dim_params());
        if corrected.is_empty() || corrected.iter().any(|&c| c >= d) {
            return Err(DpcError::config(format!(
                "corrected components {corrected:?} invalid for a {d}-dimensional state"
            )));
        }
        if scaling.state_mean.len() != d || scaling.param_mean.len() != k {
            return Err(DpcError::Dimension {
                context: "scaling statistics".into(),
                expected: d + k,
                got: scaling.state_mean.len() + scaling.param_mean.len(),
            });
        }
        let mut net = Mlp::new(&Mlp::layer_sizes(d + k + LATENT_DIM, hidden, 2 * corrected.len()), rng);
        net.zero_output_layer();
        Ok(DpcModel {
            physics,
            net,
            kernel: KernelParams::default(),
            latent_dim: LATENT_DIM,
            corrected,
            scaling,
            dt,
            window_steps,
        })
    }

    /// Paper-architecture corrector for a benchmark regime, standardized on
    /// `dataset`.
    pub fn for_benchmark(
        spec: &BenchmarkSpec,
        regime: Regime,
        dataset: &TrajectoryDataset,
        seed: u64,
    ) -> Result<DpcModel> {
        let corrected = vec![spec.corrected_component];
        let scaling = Scaling::fit(dataset, &corrected);
        let mut rng = rng::stream(seed, Domain::Init, 0);
        DpcModel::new(
            Physics::Benchmark(spec.known_model(regime)),
            corrected,
            &PAPER_HIDDEN,
            scaling,
            spec.dt,
            spec.n_steps,
            &mut rng,
        )
    }

    /// The data-only baseline: the same network with no physics.
    pub fn data_only(spec: &BenchmarkSpec, dataset: &TrajectoryDataset, seed: u64) -> Result<DpcModel> {
        let corrected: Vec<usize> = (0..spec.dim_state()).collect();
        let scaling = Scaling::fit(dataset, &corrected);
        let mut rng = rng::stream(seed, Domain::Init, 0);
        DpcModel::new(
            Physics::Zero(ZeroSde { dim_state: spec.dim_state(), dim_params: spec.dim_params() }),
            corrected,
            &PAPER_HIDDEN,
            scaling,
            spec.dt,
            spec.n_steps,
            &mut rng,
        )
    }

    pub fn dim_state(&self) -> usize {
        self.physics.model().dim_state()
    }

    pub fn dim_params(&self) -> usize {
        self.physics.model().dim_params()
    }

    pub fn label(&self) -> &str {
        self.physics.model().label()
    }

    fn net_input(&self, x: &Array2<f64>, params_std: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
        let x_std = self.scaling.standardize_states(x);
        ndarray::concatenate(Axis(1), &[x_std.view(), params_std.view(), z.view()]).unwrap()
    }

    /// De-standardized `(f_p, g_p)` for a batch of rows.
    pub fn corrections(
        &self,
        x: &Array2<f64>,
        params_std: &Array2<f64>,
        z: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let c = self.corrected.len();
        let out = self.net.forward(&self.net_input(x, params_std, z))?;
        let f = out.slice(ndarray::s![.., ..c]).to_owned() * &Scaling::row(&self.scaling.drift_scale);
        let g = out.slice(ndarray::s![.., c..]).to_owned() * &Scaling::row(&self.scaling.diffusion_scale);
        Ok((f, g))
    }

    /// One corrected Euler–Maruyama step for a single state.
    pub fn dpc_step(&self, x: &[f64], params: &[f64], z: &[f64], t: f64, db: &[f64]) -> Result<Vec<f64>> {
        let (d, k) = (self.dim_state(), self.dim_params());
        for (context, expected, got) in [
            ("state", d, x.len()),
            ("params", k, params.len()),
            ("latent", self.latent_dim, z.len()),
            ("brownian increment", d, db.len()),
        ] {
            if expected != got {
                return Err(DpcError::Dimension { context: context.into(), expected, got });
            }
        }
        let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
        let p_std = self.scaling.standardize_params(&row(params));
        let (f, g) = self.corrections(&row(x), &p_std, &row(z))?;
        let mut next = x.to_vec();
        let mut stepper = RowStepper::new(d);
        if !stepper.step(self, &mut next, params, t, f.row(0), g.row(0), db) {
            return Err(DpcError::Divergence { sample: 0, replication: 0, step: (t / self.dt).round() as usize });
        }
        Ok(next)
    }

    /// `m` corrected paths of `n_steps` for each row of `params`, starting
    /// from the matching row of `x0`. Brownian increments of path `(i, j)`
    /// come from the same stream as in
    /// [`physics_only_rollout`](crate::sde::physics_only_rollout) with the
    /// same seed; latent inputs come from an independent stream.
    pub fn rollout(
        &self,
        params: &Array2<f64>,
        x0: &Array2<f64>,
        n_steps: usize,
        m: usize,
        seed: u64,
    ) -> Result<TrajectoryDataset> {
        let (d, n) = (self.dim_state(), params.nrows());
        let mut traj = ndarray::Array4::zeros((n, m, n_steps + 1, d));
        self.rollout_observe(params, x0, n_steps, m, seed, false, |step, x| {
            traj.index_axis_mut(Axis(2), step)
                .assign(&x.view().into_shape_with_order((n, m, d)).unwrap());
        })?;
        Ok(TrajectoryDataset {
            label: format!("dpc[{}]", self.label()),
            seed,
            dt: self.dt,
            params: params.clone(),
            trajectories: traj,
        })
    }

    /// The rollout behind [`rollout`](Self::rollout), handing the state
    /// matrix (rows `i·m + j`) to `observe` after every step, step 0
    /// included. With `tolerate_divergence`, non-finite rows are carried
    /// along instead of aborting.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout_observe(
        &self,
        params: &Array2<f64>,
        x0: &Array2<f64>,
        n_steps: usize,
        m: usize,
        seed: u64,
        tolerate_divergence: bool,
        mut observe: impl FnMut(usize, &Array2<f64>),
    ) -> Result<()> {
        let (d, n) = (self.dim_state(), params.nrows());
        self.check_batch(params, x0, m)?;
        let rows = n * m;
        let mut x = repeat_rows(x0, m);
        observe(0, &x);
        let mut noise = NoiseStreams::new(seed, n, m);
        let p_rows = repeat_rows(params, m);
        let p_std = self.scaling.standardize_params(&p_rows);
        let mut db = Array2::zeros((rows, d));
        let mut z = Array2::zeros((rows, self.latent_dim));
        let mut stepper = RowStepper::new(d);
        for step in 0..n_steps {
            noise.draw(self.dt, &mut db, &mut z);
            let (f, g) = self.corrections(&x, &p_std, &z)?;
            let t = step as f64 * self.dt;
            for r in 0..rows {
                let mut row = x.row_mut(r);
                let state = row.as_slice_mut().unwrap();
                let db_r = db.row(r);
                let ok = stepper.step(
                    self,
                    state,
                    p_rows.row(r).as_slice().unwrap(),
                    t,
                    f.row(r),
                    g.row(r),
                    db_r.as_slice().unwrap(),
                );
                if !ok && !tolerate_divergence {
                    return Err(DpcError::Divergence { sample: r / m, replication: r % m, step: step + 1 });
                }
            }
            observe(step + 1, &x);
        }
        Ok(())
    }

    /// QoI samples at `steps` for one parameter point, batching all `m`
    /// paths through the network together. Diverged paths are dropped.
    pub fn qoi_ensemble(
        &self,
        params: &[f64],
        x0: &[f64],
        m: usize,
        steps: &[usize],
        qoi: Qoi,
        seed: u64,
    ) -> Result<QoiEnsemble> {
        let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
        let last = steps.iter().copied().max().unwrap_or(0);
        let mut samples = vec![Vec::with_capacity(m); steps.len()];
        let mut alive = vec![true; m];
        self.rollout_observe(&row(params), &row(x0), last, m, seed, true, |step, x| {
            for (j, ok) in alive.iter_mut().enumerate() {
                *ok &= x.row(j).iter().all(|v| v.is_finite());
            }
            for (k, &s) in steps.iter().enumerate() {
                if s == step {
                    samples[k].extend((0..m).filter(|&j| alive[j]).map(|j| qoi.eval(x.row(j).as_slice().unwrap())));
                }
            }
        })?;
        let diverged = alive.iter().filter(|&&a| !a).count();
        Ok(QoiEnsemble { steps: steps.to_vec(), samples, diverged })
    }

    fn check_batch(&self, params: &Array2<f64>, x0: &Array2<f64>, m: usize) -> Result<()> {
        if m == 0 {
            return Err(DpcError::config("n_replications must be at least 1"));
        }
        if params.ncols() != self.dim_params() {
            return Err(DpcError::Dimension {
                context: "rollout params".into(),
                expected: self.dim_params(),
                got: params.ncols(),
            });
        }
        if x0.dim() != (params.nrows(), self.dim_state()) {
            return Err(DpcError::Dimension {
                context: "rollout initial states".into(),
                expected: params.nrows() * self.dim_state(),
                got: x0.len(),
            });
        }
        Ok(())
    }

    /// The rollout recorded on `tape`, returning the state matrix (rows
    /// `i·m + j`) at every step `0..=n_steps`.
    pub fn rollout_tape<'t>(
        &self,
        tape: &'t Tape,
        net: &MlpVars<'t>,
        params: &Array2<f64>,
        x0: &Array2<f64>,
        n_steps: usize,
        m: usize,
        seed: u64,
    ) -> Result<Vec<Var<'t>>> {
        let (d, n) = (self.dim_state(), params.nrows());
        self.check_batch(params, x0, m)?;
        let rows = n * m;
        let c = self.corrected.len();
        let p_rows = repeat_rows(params, m);
        let p_std = tape.constant(self.scaling.standardize_params(&p_rows));
        let neg_mean = tape.constant(self.scaling.neg_state_mean());
        let inv_std = tape.constant(self.scaling.inv_state_std());
        let drift_scale = tape.constant(Scaling::row(&self.scaling.drift_scale));
        let diffusion_scale = tape.constant(Scaling::row(&self.scaling.diffusion_scale));
        let model = self.physics.model();

        let mut x = tape.constant(repeat_rows(x0, m));
        let mut states = vec![x];
        let mut noise = NoiseStreams::new(seed, n, m);
        let mut db = Array2::zeros((rows, d));
        let mut z = Array2::zeros((rows, self.latent_dim));
        let mut buf = vec![0.0; d];
        for step in 0..n_steps {
            noise.draw(self.dt, &mut db, &mut z);
            let t = step as f64 * self.dt;
            let x_std = x.add_row(neg_mean).mul_row(inv_std);
            let out = net.forward(tape.hconcat(&[x_std, p_std, tape.constant(z.clone())]))?;
            let f_p = out.slice_cols(0, c).mul_row(drift_scale).scatter_cols(d, &self.corrected);
            let g_p = out.slice_cols(c, 2 * c).mul_row(diffusion_scale).scatter_cols(d, &self.corrected);
            let f_k = x.map_rows(d, |r, xr, out, jac| {
                buf.iter_mut().zip(xr).for_each(|(b, &v)| *b = v);
                let p = p_rows.row(r);
                model.drift(&buf, p.as_slice().unwrap(), t, out);
                model.drift_jacobian(&buf, p.as_slice().unwrap(), t, jac);
            });
            let g_k = x.map_rows(d, |r, xr, out, jac| {
                buf.iter_mut().zip(xr).for_each(|(b, &v)| *b = v);
                let p = p_rows.row(r);
                model.diffusion(&buf, p.as_slice().unwrap(), t, out);
                model.diffusion_jacobian(&buf, p.as_slice().unwrap(), t, jac);
            });
            x = x + (f_k + f_p).scale(self.dt) + (g_k + g_p) * tape.constant(db.clone());
            if let Some(r) = x.value().rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
                return Err(DpcError::Divergence { sample: r / m, replication: r % m, step: step + 1 });
            }
            states.push(x);
        }
        Ok(states)
    }

    /// `n_paths` samples of the quantity of interest at each requested
    /// step, for one parameter point and initial state.
    pub fn predict_qoi(
        &self,
        params: &[f64],
        x0: &[f64],
        steps: &[usize],
        n_paths: usize,
        qoi: Qoi,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap();
        let last = steps.iter().copied().max().unwrap_or(0);
        let paths = self.rollout(&row(params), &row(x0), last, n_paths, seed)?;
        Ok(qoi_samples(&paths, 0, steps, qoi))
    }

    /// QoI samples at time `t` (rounded to the nearest step).
    pub fn predict_pdf(
        &self,
        params: &[f64],
        x0: &[f64],
        t: f64,
        n_paths: usize,
        qoi: Qoi,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let step = (t / self.dt).round() as usize;
        Ok(self.predict_qoi(params, x0, &[step], n_paths, qoi, seed)?.remove(0))
    }
}

/// QoI over all replications of parameter sample `i` at each step.
pub fn qoi_samples(paths: &TrajectoryDataset, i: usize, steps: &[usize], qoi: Qoi) -> Vec<Vec<f64>> {
    steps
        .iter()
        .map(|&s| {
            (0..paths.n_replications())
                .map(|j| {
                    let x = paths.trajectories.slice(ndarray::s![i, j, s, ..]);
                    qoi.eval(x.as_slice().unwrap())
                })
                .collect()
        })
        .collect()
}

/// Each row repeated `m` times in place: row `i·m + j` is row `i`.
pub fn repeat_rows(a: &Array2<f64>, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows() * m, a.ncols()), |(r, c)| a[[r / m, c]])
}

/// Per-path Brownian and latent streams.
struct NoiseStreams {
    brownian: Vec<ChaCha8Rng>,
    latent: Vec<ChaCha8Rng>,
}

impl NoiseStreams {
    fn new(seed: u64, n: usize, m: usize) -> Self {
        let index = |r: usize| path_index(r / m, r % m, m);
        NoiseStreams {
            brownian: (0..n * m).map(|r| rng::stream(seed, Domain::Brownian, index(r))).collect(),
            latent: (0..n * m).map(|r| rng::stream(seed, Domain::Latent, index(r))).collect(),
        }
    }

    fn draw(&mut self, dt: f64, db: &mut Array2<f64>, z: &mut Array2<f64>) {
        for (r, rng) in self.brownian.iter_mut().enumerate() {
            brownian_increments(rng, dt, db.row_mut(r).as_slice_mut().unwrap());
        }
        for (r, rng) in self.latent.iter_mut().enumerate() {
            z.row_mut(r).iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        }
    }
}

/// The corrected update for one row, with the same operation order as the
/// plain integrator.
struct RowStepper {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl RowStepper {
    fn new(d: usize) -> Self {
        RowStepper { drift: vec![0.0; d], diffusion: vec![0.0; d] }
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        model: &DpcModel,
        state: &mut [f64],
        params: &[f64],
        t: f64,
        f_p: ArrayView1<f64>,
        g_p: ArrayView1<f64>,
        db: &[f64],
    ) -> bool {
        let physics = model.physics.model();
        physics.drift(state, params, t, &mut self.drift);
        physics.diffusion(state, params, t, &mut self.diffusion);
        // the network enters through `+ 0.0` on uncorrected components, as on the tape
        let (mut f_full, mut g_full) = (vec![0.0; state.len()], vec![0.0; state.len()]);
        for (k, &c) in model.corrected.iter().enumerate() {
            f_full[c] = f_p[k];
            g_full[c] = g_p[k];
        }
        let mut finite = true;
        for k in 0..state.len() {
            let f = self.drift[k] + f_full[k];
            let g = self.diffusion[k] + g_full[k];
            state[k] = state[k] + f * model.dt + g * db[k];
            finite &= state[k].is_finite();
        }
        finite
    }
}
