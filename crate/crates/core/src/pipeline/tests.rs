use super::*;
use crate::benchmarks::{BenchmarkName, Regime};
use crate::dpc::Checkpoint;

fn tiny(benchmark: BenchmarkName, regime: Regime) -> RunConfig {
    let mut cfg = RunConfig::paper(benchmark, regime);
    cfg.data.n_samples = 4;
    cfg.data.n_replications = 3;
    cfg.data.n_steps = 5;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 2;
    cfg.eval.n_times = 4;
    cfg.eval.n_test_points = 2;
    cfg.eval.mc_paths = 200;
    cfg.eval.model_paths = 50;
    cfg.eval.grid_points = 64;
    cfg.checkpoint_every = 1;
    cfg
}

fn bs() -> RunConfig {
    tiny(BenchmarkName::BlackScholes, Regime::Drift)
}

#[test]
fn generate_is_reproducible_and_recorded() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = cmd_generate(&bs(), a.path()).unwrap();
    let pb = cmd_generate(&bs(), b.path()).unwrap();
    assert_eq!(sha256_file(&pa).unwrap(), sha256_file(&pb).unwrap());
    let data = TrajectoryDataset::load(&pa).unwrap();
    assert_eq!(data.trajectories.dim(), (4, 3, 6, 1));
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_sha256, bs().hash());
    assert_eq!(manifest.files["dataset.bin"], sha256_file(&pa).unwrap());
    assert_eq!(RunConfig::load(a.path().join("config.toml")).unwrap(), bs());
}

#[test]
fn a_directory_is_bound_to_its_configuration() {
    let dir = tempfile::tempdir().unwrap();
    cmd_generate(&bs(), dir.path()).unwrap();
    let err = cmd_generate(&bs().with_seed(5), dir.path()).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn training_refuses_a_dataset_from_another_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let ou = tiny(BenchmarkName::ModifiedOu, Regime::Drift);
    let foreign = generate_dataset(&ou).unwrap();
    RunDir::new(dir.path()).open(&bs()).unwrap();
    foreign.save(dir.path().join("dataset.bin")).unwrap();
    let err = cmd_train(&bs(), dir.path()).unwrap_err();
    assert_eq!(err.category(), "config");
    assert!(err.to_string().contains("modified_ou"), "{err}");
}

#[test]
fn training_refuses_a_checkpoint_for_another_regime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bs();
    cmd_generate(&cfg, dir.path()).unwrap();
    let data = TrajectoryDataset::load(dir.path().join("dataset.bin")).unwrap();
    let wrong = fresh_model(&tiny(BenchmarkName::BlackScholes, Regime::Diffusion), Method::Dpc, &data).unwrap();
    let mut ck: Checkpoint = Trainer::new(wrong, cfg.train.clone()).unwrap().checkpoint();
    ck.epoch = 0;
    std::fs::create_dir_all(dir.path().join("dpc")).unwrap();
    save_checkpoint(&ck, RunDir::new(dir.path()).checkpoint(Method::Dpc)).unwrap();
    let err = cmd_train(&cfg, dir.path()).unwrap_err();
    assert!(err.to_string().contains("drift_missing"), "{err}");
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let cfg = bs();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_generate(&cfg, a.path()).unwrap();
    cmd_generate(&cfg, b.path()).unwrap();
    let full = cmd_train(&cfg, a.path()).unwrap();

    // interrupt run b after one epoch
    let data = TrajectoryDataset::load(b.path().join("dataset.bin")).unwrap();
    let mut t = Trainer::new(fresh_model(&cfg, Method::Dpc, &data).unwrap(), cfg.train.clone()).unwrap();
    t.run_epoch(&data).unwrap();
    std::fs::create_dir_all(b.path().join("dpc")).unwrap();
    save_checkpoint(&t.checkpoint(), RunDir::new(b.path()).checkpoint(Method::Dpc)).unwrap();
    let resumed = cmd_train(&cfg, b.path()).unwrap();

    let ck = load_checkpoint(RunDir::new(b.path()).checkpoint(Method::Dpc)).unwrap();
    assert_eq!(ck.epoch, 2);
    assert_eq!(ck.history.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(full[0].1.net, resumed[0].1.net);
    let log = std::fs::read_to_string(RunDir::new(b.path()).train_log(Method::Dpc)).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn evaluate_needs_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    cmd_generate(&bs(), dir.path()).unwrap();
    let err = cmd_evaluate(&bs(), dir.path()).unwrap_err();
    assert_eq!(err.category(), "config");
    assert!(err.to_string().contains("checkpoint"), "{err}");
    let err = cmd_train(&bs(), tempfile::tempdir().unwrap().path()).unwrap_err();
    assert!(err.to_string().contains("generate"), "{err}");
}

#[test]
fn untrained_corrector_evaluates_like_physics_only() {
    let mut cfg = bs();
    cfg.train.epochs = 0;
    let dir = tempfile::tempdir().unwrap();
    let reports = cmd_reproduce(&cfg, dir.path()).unwrap();
    assert_eq!(reports.len(), 3);
    let eps = |m: Method| reports.iter().find(|r| r.method == m).unwrap().epsilon;
    assert_eq!(eps(Method::Dpc), eps(Method::PhysicsOnly));

    let table = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,black_scholes_drift,black_scholes_drift_sum");
    assert_eq!(lines.len(), 4);
    let pdfs: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("pdf_black_scholes_drift_"))
        .collect();
    assert_eq!(pdfs.len(), 2);
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.files.contains_key("table1.csv") && manifest.files.contains_key("dpc/checkpoint.json"));
}

#[test]
fn reproduce_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_reproduce(&bs(), a.path()).unwrap();
    cmd_reproduce(&bs(), b.path()).unwrap();
    for f in ["table1.csv", "hellinger.csv", "dataset.bin"] {
        assert_eq!(sha256_file(a.path().join(f)).unwrap(), sha256_file(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn convergence_requires_the_reference_size() {
    let mut cfg = bs();
    cfg.convergence.sample_sizes = vec![2, 4];
    let err = cmd_convergence(&cfg, tempfile::tempdir().unwrap().path()).unwrap_err();
    assert_eq!(err.category(), "config");
}

#[test]
fn table1_has_one_column_pair_per_cell() {
    let report = |method, regime, eps| MethodReport {
        method,
        benchmark: BenchmarkName::ModifiedOu,
        regime,
        times: vec![0.1],
        hellinger: vec![eps],
        epsilon: eps,
        epsilon_sum: eps,
        diverged: 0,
    };
    let reports = [
        report(Method::PhysicsOnly, Regime::Drift, 0.5),
        report(Method::Dpc, Regime::Drift, 0.1),
        report(Method::Dpc, Regime::Diffusion, 0.2),
    ];
    let mut out = vec![];
    write_table1(&mut out, &reports).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(
        text,
        "method,modified_ou_drift,modified_ou_drift_sum,modified_ou_diffusion,modified_ou_diffusion_sum\n\
         dpc,0.100000,0.100000,0.200000,0.200000\n\
         physics_only,0.500000,0.500000,,\n"
    );
}
