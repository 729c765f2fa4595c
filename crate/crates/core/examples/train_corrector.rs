//! Train a physics corrector for Black–Scholes with the drift removed from
//! the known physics, at a reduced scale, and compare it with the
//! physics-only model.

use dpc::benchmarks::{make_benchmark, BenchmarkName, Regime};
use dpc::dpc::{DpcModel, TrainConfig, Trainer};
use dpc::eval::{evaluate, EvalConfig, Method, Source};
use dpc::sde::{simulate_ensemble, SimConfig};

fn main() -> dpc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let spec = make_benchmark(BenchmarkName::BlackScholes);
    let cfg = SimConfig { dt: spec.dt, n_steps: spec.n_steps, initial_state: spec.initial_state(), seed: 1 };
    let data = simulate_ensemble(&spec.true_model(), &cfg, &spec.param_dists, 20, 10)?;

    let model = DpcModel::for_benchmark(&spec, Regime::Drift, &data, 2)?;
    let train_cfg = TrainConfig { epochs: 10, lr: spec.lr_schedule(Regime::Drift), ..TrainConfig::default() };
    let mut trainer = Trainer::new(model, train_cfg)?;
    trainer.run(&data, |_, r| {
        println!("epoch {:2}: loss {:.4}", r.epoch, r.loss);
        Ok(())
    })?;

    let known = spec.known_model(Regime::Drift);
    let eval_cfg = EvalConfig { n_test_points: 2, mc_paths: 2000, model_paths: 500, ..EvalConfig::default() };
    let sources = [(Method::Dpc, Source::Corrected(&trainer.model)), (Method::PhysicsOnly, Source::Physics(&known))];
    for report in evaluate(&spec, Regime::Drift, &sources, &eval_cfg)? {
        println!("{:>12}: time-averaged Hellinger {:.4}", report.method, report.epsilon);
    }
    Ok(())
}
