use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpc::benchmarks::{BenchmarkName, Regime};
use dpc::pipeline::{self, RunConfig};
use dpc::Result;

/// Deep physics corrector: train and evaluate gray-box neural SDE surrogates.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training dataset from the true model.
    Generate(RunArgs),
    /// Train the corrector and the data-only baseline (resumes if a checkpoint exists).
    Train(RunArgs),
    /// Compare trained models and the physics-only baseline with Monte Carlo truth.
    Evaluate(RunArgs),
    /// Generate, train and evaluate in one go.
    Reproduce(RunArgs),
    /// Sample-size study: ε(N) / ε(40).
    Convergence(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML); unspecified fields take the published defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<BenchmarkName>,
    #[arg(long)]
    regime: Option<Regime>,
    /// Output directory [default: $DPC_OUT/<benchmark>_<regime>, or runs/…]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for data, training and evaluation.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::paper(BenchmarkName::BlackScholes, Regime::Drift),
        };
        // a benchmark or regime given on the command line brings its own defaults
        if self.benchmark.is_some_and(|b| b != cfg.benchmark) || self.regime.is_some_and(|r| r != cfg.regime) {
            let benchmark = self.benchmark.unwrap_or(cfg.benchmark);
            let regime = self.regime.unwrap_or(cfg.regime);
            if self.config.is_some() {
                log::warn!("--benchmark/--regime override the config file; its other settings are replaced by defaults");
            }
            cfg = RunConfig::paper(benchmark, regime);
        }
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        cfg.validate()?;
        let out = self.out.clone().unwrap_or_else(|| pipeline::default_out_dir(&cfg));
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<()> {
    let (args, stage): (&RunArgs, fn(&RunConfig, &std::path::Path) -> Result<()>) = match &cli.command {
        Command::Generate(a) => (a, |c, o| pipeline::cmd_generate(c, o).map(drop)),
        Command::Train(a) => (a, |c, o| pipeline::cmd_train(c, o).map(drop)),
        Command::Evaluate(a) => (a, |c, o| pipeline::cmd_evaluate(c, o).map(drop)),
        Command::Reproduce(a) => (a, |c, o| pipeline::cmd_reproduce(c, o).map(drop)),
        Command::Convergence(a) => (a, |c, o| pipeline::cmd_convergence(c, o).map(drop)),
    };
    let (cfg, out) = args.resolve()?;
    if args.dry_run {
        println!("# output directory: {}", out.display());
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    stage(&cfg, &out)?;
    println!("{}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
