//! The four benchmark problems: true versus ablated coefficients, and how
//! far the physics-only rollout drifts from the truth.

use dpc::benchmarks::{make_benchmark, BenchmarkName, Regime};
use dpc::sde::{physics_only_rollout, SdeModel, SimConfig};

fn main() -> dpc::Result<()> {
    for name in BenchmarkName::ALL {
        let spec = make_benchmark(name);
        let truth = spec.true_model();
        let xi: Vec<f64> = spec.param_dists.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let x0 = spec.initial_state().resolve(&xi);
        println!("{name}: ξ = {xi:?}, X₀ = {x0:?}");

        let params = ndarray::Array2::from_shape_vec((1, xi.len()), xi.clone()).unwrap();
        let steps = 20;
        let cfg = SimConfig { dt: spec.dt, n_steps: steps, initial_state: spec.initial_state(), seed: 1 };
        let reference = physics_only_rollout(&truth, &cfg, &params, 200)?;
        for regime in [Regime::Drift, Regime::Diffusion] {
            let known = spec.known_model(regime);
            let mut f = vec![0.0; known.dim_state()];
            let mut g = vec![0.0; known.dim_state()];
            known.drift(&x0, &xi, 0.0, &mut f);
            known.diffusion(&x0, &xi, 0.0, &mut g);
            let rollout = physics_only_rollout(&known, &cfg, &params, 200)?;
            let qoi_mean = |d: &dpc::sde::TrajectoryDataset| {
                (0..200).map(|j| spec.qoi.eval(d.trajectories.slice(ndarray::s![0, j, steps, ..]).as_slice().unwrap())).sum::<f64>() / 200.0
            };
            println!(
                "  {:<38} f(X₀) = {f:?}, g(X₀) = {g:?}; mean QoI after {steps} steps {:.4} (truth {:.4})",
                known.label(),
                qoi_mean(&rollout),
                qoi_mean(&reference)
            );
        }
    }
    Ok(())
}
