//! A complete run — generate, train, evaluate — at toy scale, written to a
//! temporary directory with its manifest.

use dpc::benchmarks::{BenchmarkName, Regime};
use dpc::pipeline::{cmd_reproduce, RunConfig};

fn main() -> dpc::Result<()> {
    let mut cfg = RunConfig::paper(BenchmarkName::ModifiedOu, Regime::Diffusion);
    cfg.data.n_samples = 6;
    cfg.data.n_replications = 5;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 3;
    cfg.eval.n_test_points = 2;
    cfg.eval.mc_paths = 1000;
    cfg.eval.model_paths = 200;
    println!("{}", cfg.to_toml_string());

    let out = std::env::temp_dir().join(format!("dpc-example-{}", std::process::id()));
    cmd_reproduce(&cfg, &out)?;
    println!("{}", std::fs::read_to_string(out.join("table1.csv"))?);
    println!("{}", std::fs::read_to_string(out.join("manifest.json"))?);
    std::fs::remove_dir_all(&out)?;
    Ok(())
}
