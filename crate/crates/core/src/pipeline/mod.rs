//! Reproducible runs: data generation → training → evaluation, with every
//! artifact written under one output directory next to a manifest of the
//! configuration, seeds and file hashes.
//!
//! Directory layout:
//!
//! ```text
//! <out>/config.toml                 resolved configuration
//! <out>/manifest.json               config hash, seeds, versions, file hashes
//! <out>/dataset.bin                 training trajectories
//! <out>/<method>/checkpoint.json    trained corrector (dpc, data_only)
//! <out>/<method>/train_log.csv      per-epoch loss and kernel hyperparameters
//! <out>/table1.csv                  time-averaged Hellinger error per method
//! <out>/hellinger.csv               H(t) per method
//! <out>/pdf_<bench>_<regime>_<t>.csv densities at selected times
//! <out>/convergence/convergence.csv  N, ε, ε_n
//! ```

mod config;

pub use config::{ConvergenceConfig, DataConfig, KernelInit, RunConfig};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmarks::BenchmarkSpec;
use crate::dpc::{load_checkpoint, save_checkpoint, DpcModel, EpochRecord, Trainer};
use crate::error::{DpcError, Result};
use crate::eval::{self, EvalSamples, Method, MethodReport, Source};
use crate::sde::{simulate_ensemble, SimConfig, TrajectoryDataset};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "DPC_OUT";

/// Default output directory for a run: `$DPC_OUT/<bench>_<regime>`, or
/// `runs/<bench>_<regime>` when the variable is unset.
pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}_{}", cfg.benchmark, cfg.regime))
}

/// Record of how an output directory was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config_sha256: String,
    pub data_seed: u64,
    pub train_seed: u64,
    pub eval_seed: u64,
    /// SHA-256 of every artifact, keyed by path relative to the directory.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Output directory of one run.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> RunDir {
        RunDir { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.bin")
    }
    pub fn checkpoint(&self, method: Method) -> PathBuf {
        self.root.join(method.as_str()).join("checkpoint.json")
    }
    pub fn train_log(&self, method: Method) -> PathBuf {
        self.root.join(method.as_str()).join("train_log.csv")
    }
    pub fn table1(&self) -> PathBuf {
        self.root.join("table1.csv")
    }
    pub fn hellinger(&self) -> PathBuf {
        self.root.join("hellinger.csv")
    }
    pub fn convergence(&self) -> PathBuf {
        self.root.join("convergence").join("convergence.csv")
    }

    /// Claim the directory for `cfg`: write the config and a manifest, or
    /// check that an existing manifest was made with the same config.
    pub fn open(&self, cfg: &RunConfig) -> Result<Manifest> {
        std::fs::create_dir_all(&self.root)?;
        let hash = cfg.hash();
        if self.manifest().exists() {
            let manifest: Manifest = serde_json::from_slice(&std::fs::read(self.manifest())?)
                .map_err(|e| DpcError::Format(format!("{}: {e}", self.manifest().display())))?;
            if manifest.config_sha256 != hash {
                return Err(DpcError::config(format!(
                    "{} holds a run with a different configuration; choose another --out",
                    self.root.display()
                )));
            }
            return Ok(manifest);
        }
        std::fs::write(self.config(), cfg.to_toml_string())?;
        let manifest = Manifest {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hash,
            data_seed: cfg.data.seed,
            train_seed: cfg.train.seed,
            eval_seed: cfg.eval.seed,
            files: BTreeMap::new(),
        };
        self.save_manifest(&manifest)?;
        Ok(manifest)
    }

    fn save_manifest(&self, manifest: &Manifest) -> Result<()> {
        let json = serde_json::to_vec_pretty(manifest).map_err(|e| DpcError::Format(e.to_string()))?;
        std::fs::write(self.manifest(), json)?;
        Ok(())
    }

    /// Hash `files` into the manifest.
    pub fn record(&self, files: &[PathBuf]) -> Result<()> {
        let mut manifest: Manifest = serde_json::from_slice(&std::fs::read(self.manifest())?)
            .map_err(|e| DpcError::Format(e.to_string()))?;
        for f in files {
            let key = f.strip_prefix(&self.root).unwrap_or(f).to_string_lossy().replace('\\', "/");
            manifest.files.insert(key, sha256_file(f)?);
        }
        self.save_manifest(&manifest)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Simulate the training dataset from the true model.
pub fn generate_dataset(cfg: &RunConfig) -> Result<TrajectoryDataset> {
    let spec = cfg.spec();
    let sim = SimConfig { dt: spec.dt, n_steps: spec.n_steps, initial_state: spec.initial_state(), seed: cfg.data.seed };
    simulate_ensemble(&spec.true_model(), &sim, &spec.param_dists, cfg.data.n_samples, cfg.data.n_replications)
}

/// Write the training dataset. Returns its path.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let dir = RunDir::new(out);
    dir.open(cfg)?;
    let data = generate_dataset(cfg)?;
    data.save(dir.dataset())?;
    dir.record(&[dir.dataset()])?;
    log::info!("wrote {} ({} × {} paths)", dir.dataset().display(), data.n_samples(), data.n_replications());
    Ok(dir.dataset())
}

/// Check that a dataset matches the configured benchmark and sizes.
pub fn check_dataset(cfg: &RunConfig, data: &TrajectoryDataset) -> Result<()> {
    let expected = cfg.spec().true_model();
    let expected = crate::sde::SdeModel::label(&expected).to_string();
    if data.label != expected {
        return Err(DpcError::config(format!("dataset was generated by '{}', configuration expects '{expected}'", data.label)));
    }
    let d = &cfg.data;
    if (data.n_samples(), data.n_replications(), data.n_steps()) != (d.n_samples, d.n_replications, d.n_steps)
        || data.dt != d.dt
    {
        return Err(DpcError::config(format!(
            "dataset shape N={}, m={}, Nt={}, dt={} does not match the configuration",
            data.n_samples(),
            data.n_replications(),
            data.n_steps(),
            data.dt
        )));
    }
    Ok(())
}

/// A freshly initialized corrector for `method`.
pub fn fresh_model(cfg: &RunConfig, method: Method, data: &TrajectoryDataset) -> Result<DpcModel> {
    let spec = cfg.spec();
    let mut model = match method {
        Method::Dpc => DpcModel::for_benchmark(&spec, cfg.regime, data, cfg.train.seed)?,
        Method::DataOnly => DpcModel::data_only(&spec, data, cfg.train.seed)?,
        Method::PhysicsOnly => return Err(DpcError::config("the physics-only baseline has nothing to train")),
    };
    model.kernel = cfg.kernel.params();
    Ok(model)
}

fn check_model(cfg: &RunConfig, method: Method, model: &DpcModel, data: &TrajectoryDataset) -> Result<()> {
    let fresh = fresh_model(cfg, method, data)?;
    if model.label() != fresh.label() || model.corrected != fresh.corrected || model.dim_params() != fresh.dim_params() {
        return Err(DpcError::config(format!(
            "checkpoint holds a '{}' corrector, configuration expects '{}'",
            model.label(),
            fresh.label()
        )));
    }
    Ok(())
}

fn write_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", EpochRecord::CSV_HEADER)?;
    for r in history {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Train (or resume training) one corrector; checkpoints every
/// `checkpoint_every` epochs.
pub fn train_method(cfg: &RunConfig, dir: &RunDir, method: Method, data: &TrajectoryDataset) -> Result<DpcModel> {
    let ck_path = dir.checkpoint(method);
    let mut trainer = if ck_path.exists() {
        let ck = load_checkpoint(&ck_path)?;
        check_model(cfg, method, &ck.model, data)?;
        if ck.config != cfg.train {
            return Err(DpcError::config(format!("{} was trained with a different training block", ck_path.display())));
        }
        log::info!("{method}: resuming at epoch {}", ck.epoch);
        Trainer::from_checkpoint(ck)?
    } else {
        Trainer::new(fresh_model(cfg, method, data)?, cfg.train.clone())?
    };
    let save = |t: &Trainer| -> Result<()> {
        let ck = t.checkpoint();
        if let Some(parent) = ck_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        save_checkpoint(&ck, &ck_path)?;
        write_log(&dir.train_log(method), &ck.history)
    };
    let every = cfg.checkpoint_every;
    trainer.run(data, |t, _| if t.epoch % every == 0 { save(t) } else { Ok(()) })?;
    save(&trainer)?;
    dir.record(&[ck_path.clone(), dir.train_log(method)])?;
    Ok(trainer.checkpoint().model)
}

fn load_dataset(cfg: &RunConfig, dir: &RunDir) -> Result<TrajectoryDataset> {
    let path = dir.dataset();
    if !path.exists() {
        return Err(DpcError::config(format!("no dataset at {}; run `generate` first", path.display())));
    }
    let data = TrajectoryDataset::load(&path)?;
    check_dataset(cfg, &data)?;
    Ok(data)
}

/// Train the physics-corrected model and the data-only baseline.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<(Method, DpcModel)>> {
    let dir = RunDir::new(out);
    dir.open(cfg)?;
    let data = load_dataset(cfg, &dir)?;
    [Method::Dpc, Method::DataOnly]
        .into_iter()
        .map(|m| Ok((m, train_method(cfg, &dir, m, &data)?)))
        .collect()
}

fn load_trained(cfg: &RunConfig, dir: &RunDir, method: Method, data: &TrajectoryDataset) -> Result<DpcModel> {
    let path = dir.checkpoint(method);
    if !path.exists() {
        return Err(DpcError::config(format!("no {method} checkpoint at {}; run `train` first", path.display())));
    }
    let model = load_checkpoint(&path)?.model;
    check_model(cfg, method, &model, data)?;
    Ok(model)
}

/// `table1.csv`: one row per method, one column per (benchmark, regime)
/// for the mean and for the sum of `H(t)` over evaluation times.
pub fn write_table1(w: &mut impl Write, reports: &[MethodReport]) -> Result<()> {
    let mut columns: Vec<(String, String)> = vec![];
    for r in reports {
        let key = (r.benchmark.to_string(), r.regime.to_string());
        if !columns.contains(&key) {
            columns.push(key);
        }
    }
    write!(w, "method")?;
    for (b, g) in &columns {
        write!(w, ",{b}_{g},{b}_{g}_sum")?;
    }
    writeln!(w)?;
    for method in Method::ALL {
        if !reports.iter().any(|r| r.method == method) {
            continue;
        }
        write!(w, "{method}")?;
        for (b, g) in &columns {
            match reports.iter().find(|r| r.method == method && r.benchmark.to_string() == *b && r.regime.to_string() == *g) {
                Some(r) => write!(w, ",{:.6},{:.6}", r.epsilon, r.epsilon_sum)?,
                None => write!(w, ",,")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Times (indices into the evaluation steps) at which densities are
/// exported: the end of the training window and the last evaluation time.
fn pdf_time_indices(steps: &[usize], window_steps: usize) -> Vec<usize> {
    let inside = steps.iter().rposition(|&s| s <= window_steps).unwrap_or(0);
    let mut idx = vec![inside, steps.len() - 1];
    idx.dedup();
    idx
}

fn write_pdfs(cfg: &RunConfig, spec: &BenchmarkSpec, dir: &RunDir, samples: &EvalSamples) -> Result<Vec<PathBuf>> {
    let mut written = vec![];
    for k in pdf_time_indices(&samples.steps, spec.n_steps) {
        let t = samples.steps[k] as f64 * spec.dt;
        let path = dir.root.join(format!("pdf_{}_{}_{t:.3}.csv", cfg.benchmark, cfg.regime));
        let mut w = create(&path)?;
        eval::write_pdf_csv(&mut w, samples, 0, k, cfg.eval.grid_points)?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Compare the trained models and the physics-only baseline against Monte
/// Carlo ground truth.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<Vec<MethodReport>> {
    let dir = RunDir::new(out);
    dir.open(cfg)?;
    let data = load_dataset(cfg, &dir)?;
    let dpc = load_trained(cfg, &dir, Method::Dpc, &data)?;
    let data_only = load_trained(cfg, &dir, Method::DataOnly, &data)?;
    let spec = cfg.spec();
    let known = spec.known_model(cfg.regime);
    let sources = [
        (Method::Dpc, Source::Corrected(&dpc)),
        (Method::DataOnly, Source::Corrected(&data_only)),
        (Method::PhysicsOnly, Source::Physics(&known)),
    ];
    let samples = eval::draw_samples(&spec, &sources, &cfg.eval)?;
    let reports = eval::reports(&spec, cfg.regime, &samples, cfg.eval.grid_points)?;

    let mut w = create(&dir.table1())?;
    write_table1(&mut w, &reports)?;
    w.flush()?;
    let mut w = create(&dir.hellinger())?;
    eval::write_hellinger_series(&mut w, &reports)?;
    w.flush()?;
    let mut files = vec![dir.table1(), dir.hellinger()];
    files.extend(write_pdfs(cfg, &spec, &dir, &samples)?);
    dir.record(&files)?;
    for r in &reports {
        log::info!("{}: ε = {:.4} (sum {:.3}, {} diverged paths)", r.method, r.epsilon, r.epsilon_sum, r.diverged);
    }
    Ok(reports)
}

/// Generate, train and evaluate in one go.
pub fn cmd_reproduce(cfg: &RunConfig, out: &Path) -> Result<Vec<MethodReport>> {
    let dir = RunDir::new(out);
    dir.open(cfg)?;
    if !dir.dataset().exists() {
        cmd_generate(cfg, out)?;
    }
    cmd_train(cfg, out)?;
    cmd_evaluate(cfg, out)
}

/// Train one corrector per training-set size (nested subsets of one
/// dataset) and report `ε_n = ε(N) / ε(40)`.
pub fn cmd_convergence(cfg: &RunConfig, out: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let sizes = &cfg.convergence.sample_sizes;
    if !sizes.contains(&eval::REFERENCE_N) {
        return Err(DpcError::config(format!("convergence sample sizes must include {}", eval::REFERENCE_N)));
    }
    let n_max = sizes.iter().copied().max().unwrap_or(0);
    let mut base = cfg.clone();
    base.data.n_samples = n_max;
    let dir = RunDir::new(out);
    dir.open(cfg)?;
    let full = generate_dataset(&base)?;
    let spec = cfg.spec();
    let mut points = vec![];
    for &n in sizes {
        let mut sub = base.clone();
        sub.data.n_samples = n;
        let sub_dir = RunDir::new(out.join("convergence").join(format!("n{n}")));
        sub_dir.open(&sub)?;
        let data = full.truncate_samples(n);
        let model = train_method(&sub, &sub_dir, Method::Dpc, &data)?;
        let reports = eval::evaluate(&spec, cfg.regime, &[(Method::Dpc, Source::Corrected(&model))], &cfg.eval)?;
        log::info!("N = {n}: ε = {:.4}", reports[0].epsilon);
        points.push((n, reports[0].epsilon));
    }
    let table = eval::normalize_convergence(&points)?;
    let mut w = create(&dir.convergence())?;
    writeln!(w, "n_samples,epsilon,epsilon_n")?;
    for (n, e, en) in &table {
        writeln!(w, "{n},{e:.6},{en:.6}")?;
    }
    w.flush()?;
    dir.record(&[dir.convergence()])?;
    Ok(table)
}

#[cfg(test)]
mod tests;
