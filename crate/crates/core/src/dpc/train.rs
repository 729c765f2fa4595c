//! Mini-batch training of a [`DpcModel`] by conditional MMD between
//! observed and simulated trajectories, back-propagated through the whole
//! rollout.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{repeat_rows, DpcModel};
use crate::autodiff::{Adam, LrSchedule, MlpVars, Tape, Var};
use crate::cmmd::{cmmd2_var, KernelVars};
use crate::error::{DpcError, Result};
use crate::rng::{self, Domain};
use crate::sde::TrajectoryDataset;

const CHECKPOINT_VERSION: u32 = 1;
/// Consecutive non-finite batch losses tolerated before training aborts.
const MAX_CONSECUTIVE_FAILURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    /// Simulated replications per parameter sample; the dataset's `m` if unset.
    pub n_replications: Option<usize>,
    /// Stop when the best epoch loss has not improved by a relative
    /// `plateau_tol` for this many epochs.
    pub patience: usize,
    pub plateau_tol: f64,
    /// Also update `log λ`, `log β_in`, `log β_out`.
    pub train_kernel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            batch_size: 10,
            lr: LrSchedule::constant(1e-5),
            seed: 0,
            n_replications: None,
            patience: 200,
            plateau_tol: 1e-4,
            train_kernel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(DpcError::config(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.lr.initial > 0.0 && self.lr.factor > 0.0) {
            return Err(DpcError::config("learning rate and decay factor must be positive"));
        }
        if self.n_replications == Some(0) {
            return Err(DpcError::config("n_replications must be at least 1"));
        }
        Ok(())
    }
}

/// JSON has no NaN or infinity: write them as `null`, read `null` back as
/// +∞ (the only non-finite value a loss slot starts with).
mod non_finite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean finite batch loss (+∞ if every batch failed).
    #[serde(with = "non_finite_as_null")]
    pub loss: f64,
    pub lambda: f64,
    pub beta_in: f64,
    pub beta_out: f64,
    pub skipped_batches: usize,
    /// Seconds since training (or the resumed run) started.
    pub wall_time: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,lr,loss,lambda,beta_in,beta_out,wall_time";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:.3}",
            self.epoch, self.lr, self.loss, self.lambda, self.beta_in, self.beta_out, self.wall_time
        )
    }
}

/// Everything needed to continue training exactly where it stopped. All
/// random streams are derived from `(config.seed, epoch, batch)`, so the
/// epoch counter is the complete random-number state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: DpcModel,
    pub adam: Adam,
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    #[serde(with = "non_finite_as_null")]
    pub best_loss: f64,
    pub best_epoch: usize,
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_vec(ck).map_err(|e| DpcError::Format(format!("checkpoint encoding: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let ck: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| DpcError::Format(format!("checkpoint: {e}")))?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(DpcError::Format(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ck.version
        )));
    }
    Ok(ck)
}

/// Standardized trajectory features `X_{1..Nt}` scaled to unit RMS per
/// entry, so kernel distances do not grow with the window length.
fn feature_scale(n_steps: usize, d: usize) -> f64 {
    1.0 / ((n_steps * d) as f64).sqrt()
}

fn target_features(model: &DpcModel, data: &TrajectoryDataset, batch: &[usize]) -> Array2<f64> {
    let (m, nt, d) = (data.n_replications(), data.n_steps(), data.dim_state());
    let mut out = Array2::zeros((batch.len() * m, nt * d));
    let scale = feature_scale(nt, d);
    for (b, &i) in batch.iter().enumerate() {
        for j in 0..m {
            let path = data.trajectories.slice(ndarray::s![i, j, 1.., ..]).to_owned();
            let std = model.scaling.standardize_states(&path);
            let mut row = out.row_mut(b * m + j);
            row.assign(&std.into_shape_with_order(nt * d).unwrap());
            row.mapv_inplace(|v| v * scale);
        }
    }
    out
}

/// CMMD between the observed paths of `batch` and `m` fresh simulated paths
/// per parameter sample, conditioned on the standardized parameters.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<'t>(
    model: &DpcModel,
    tape: &'t Tape,
    net: &MlpVars<'t>,
    kernel: &KernelVars<'t>,
    data: &TrajectoryDataset,
    batch: &[usize],
    m: usize,
    seed: u64,
) -> Result<Var<'t>> {
    let (nt, d) = (data.n_steps(), data.dim_state());
    let params = data.params.select(Axis(0), batch);
    let x0 = Array2::from_shape_fn((batch.len(), d), |(b, c)| data.trajectories[[batch[b], 0, 0, c]]);
    let states = model.rollout_tape(tape, net, &params, &x0, nt, m, seed)?;

    let neg_mean = tape.constant(model.scaling.neg_state_mean());
    let inv_std = tape.constant(model.scaling.inv_state_std());
    let standardized: Vec<Var> = states[1..].iter().map(|x| x.add_row(neg_mean).mul_row(inv_std)).collect();
    let outputs_p = tape.hconcat(&standardized).scale(feature_scale(nt, d));
    let outputs_t = tape.constant(target_features(model, data, batch));

    let p_std = model.scaling.standardize_params(&params);
    let inputs_t = tape.constant(repeat_rows(&p_std, data.n_replications()));
    let inputs_p = tape.constant(repeat_rows(&p_std, m));
    cmmd2_var(tape, inputs_t, outputs_t, inputs_p, outputs_p, kernel)
}

/// Stateful training loop; see [`train`] for the one-shot form.
pub struct Trainer {
    pub model: DpcModel,
    pub adam: Adam,
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    best_loss: f64,
    best_epoch: usize,
    consecutive_failures: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(model: DpcModel, config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let mut tensors = model.net.tensors();
        let kernel_slots = [Array2::zeros((1, 1)), Array2::zeros((1, 1)), Array2::zeros((1, 1))];
        tensors.extend(kernel_slots.iter());
        let adam = Adam::new(&tensors, config.lr.rate(0));
        Ok(Trainer {
            model,
            adam,
            config,
            epoch: 0,
            history: vec![],
            best_loss: f64::INFINITY,
            best_epoch: 0,
            consecutive_failures: 0,
            started: Instant::now(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Trainer> {
        ck.config.validate()?;
        Ok(Trainer {
            model: ck.model,
            adam: ck.adam,
            config: ck.config,
            epoch: ck.epoch,
            history: ck.history,
            best_loss: ck.best_loss,
            best_epoch: ck.best_epoch,
            consecutive_failures: 0,
            started: Instant::now(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            adam: self.adam.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            best_loss: self.best_loss,
            best_epoch: self.best_epoch,
        }
    }

    /// True once the loss has plateaued for `patience` epochs.
    pub fn plateaued(&self) -> bool {
        self.config.patience > 0 && self.epoch >= self.best_epoch + self.config.patience
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || self.plateaued()
    }

    fn check_data(&self, data: &TrajectoryDataset) -> Result<()> {
        let model = &self.model;
        if data.dim_state() != model.dim_state() || data.dim_params() != model.dim_params() {
            return Err(DpcError::Dimension {
                context: format!("dataset '{}' for model '{}'", data.label, model.label()),
                expected: model.dim_state() + model.dim_params(),
                got: data.dim_state() + data.dim_params(),
            });
        }
        if data.n_samples() == 0 || data.n_steps() == 0 {
            return Err(DpcError::EmptySamples);
        }
        Ok(())
    }

    /// One pass over all mini-batches.
    pub fn run_epoch(&mut self, data: &TrajectoryDataset) -> Result<EpochRecord> {
        self.check_data(data)?;
        let epoch = self.epoch;
        let lr = self.config.lr.rate(epoch);
        self.adam.lr = lr;
        let m = self.config.n_replications.unwrap_or(data.n_replications());
        let mut order: Vec<usize> = (0..data.n_samples()).collect();
        order.shuffle(&mut rng::stream(self.config.seed, Domain::Shuffle, epoch as u64));

        let (mut total, mut finite, mut skipped) = (0.0, 0usize, 0usize);
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let seed = rng::derive_seed(self.config.seed, &[epoch as u64, b as u64]);
            match self.train_batch(data, batch, m, seed)? {
                Some(loss) => {
                    total += loss;
                    finite += 1;
                    self.consecutive_failures = 0;
                }
                None => {
                    skipped += 1;
                    self.consecutive_failures += 1;
                    if self.consecutive_failures >= MAX_CONSECUTIVE_FAILURES {
                        return Err(DpcError::TrainingDiverged { consecutive: self.consecutive_failures, epoch });
                    }
                }
            }
        }
        let loss = if finite > 0 { total / finite as f64 } else { f64::INFINITY };
        if loss < self.best_loss * (1.0 - self.config.plateau_tol) || !self.best_loss.is_finite() && loss.is_finite() {
            self.best_loss = loss;
            self.best_epoch = epoch;
        }
        self.epoch += 1;
        let k = &self.model.kernel;
        let record = EpochRecord {
            epoch,
            lr,
            loss,
            lambda: k.lambda(),
            beta_in: k.beta_in(),
            beta_out: k.beta_out(),
            skipped_batches: skipped,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {loss:.6e} lr {lr:.2e} lambda {:.4e} beta_in {:.4} beta_out {:.4} ({:.1}s)",
            record.lambda,
            record.beta_in,
            record.beta_out,
            record.wall_time
        );
        self.history.push(record.clone());
        Ok(record)
    }

    /// Forward, backward and update for one mini-batch. `None` means the
    /// loss or a gradient was non-finite and the update was skipped.
    fn train_batch(&mut self, data: &TrajectoryDataset, batch: &[usize], m: usize, seed: u64) -> Result<Option<f64>> {
        let tape = Tape::new();
        let net = self.model.net.register(&tape);
        let kernel = if self.config.train_kernel {
            self.model.kernel.register(&tape)
        } else {
            self.model.kernel.constants(&tape)
        };
        let loss = match batch_loss(&self.model, &tape, &net, &kernel, data, batch, m, seed) {
            Ok(loss) => loss,
            Err(e @ DpcError::Divergence { .. }) => {
                log::warn!("epoch {}: skipping batch: {e}", self.epoch);
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let value = loss.item();
        if !value.is_finite() {
            log::warn!("epoch {}: skipping batch with non-finite loss {value}", self.epoch);
            return Ok(None);
        }
        let grads = tape.backward(loss)?;
        let mut g: Vec<Array2<f64>> = net.vars().into_iter().map(|v| grads.get_or_zeros(v)).collect();
        g.extend(kernel.vars().into_iter().map(|v| grads.get_or_zeros(v)));
        drop(grads);
        drop(tape);

        let k = &mut self.model.kernel;
        let mut kernel_values = [k.log_lambda, k.log_beta_in, k.log_beta_out].map(|v| Array2::from_elem((1, 1), v));
        let mut params = self.model.net.tensors_mut();
        params.extend(kernel_values.iter_mut());
        match self.adam.step(&mut params, &g) {
            Ok(()) => {}
            Err(e @ DpcError::NonFiniteGradient { .. }) => {
                log::warn!("epoch {}: skipping batch: {e}", self.epoch);
                return Ok(None);
            }
            Err(e) => return Err(e),
        }
        let k = &mut self.model.kernel;
        [k.log_lambda, k.log_beta_in, k.log_beta_out] = kernel_values.map(|a| a[[0, 0]]);
        Ok(Some(value))
    }

    /// Train until the epoch budget is spent or the loss plateaus, calling
    /// `on_epoch` after every epoch (for logging and checkpointing).
    pub fn run(
        &mut self,
        data: &TrajectoryDataset,
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while !self.finished() {
            let record = self.run_epoch(data)?;
            on_epoch(self, &record)?;
        }
        if self.plateaued() {
            log::info!("loss plateaued; stopping at epoch {}", self.epoch);
        }
        Ok(())
    }
}

/// Train `model` on `data` and return it with the per-epoch log.
pub fn train(model: DpcModel, data: &TrajectoryDataset, config: TrainConfig) -> Result<(DpcModel, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(data, |_, _| Ok(()))?;
    Ok((trainer.model, trainer.history))
}
