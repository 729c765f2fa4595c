//! Euler–Maruyama ensemble of geometric Brownian motion against its closed
//! form moments.

use dpc::sde::{simulate_ensemble, FnSde, InitialState, SimConfig, UniformBox};

fn main() -> dpc::Result<()> {
    let (mu, sigma) = (0.05, 0.2);
    let gbm = FnSde::new(
        "gbm",
        1,
        2,
        |x, p, _, out| out[0] = p[0] * x[0],
        |x, p, _, out| out[0] = p[1] * x[0],
    );
    let cfg = SimConfig { dt: 1e-3, n_steps: 100, initial_state: InitialState::Fixed(vec![1.0]), seed: 7 };
    // a degenerate box pins the parameters to (μ, σ)
    let params = UniformBox { bounds: vec![(mu, mu), (sigma, sigma)] };
    let data = simulate_ensemble(&gbm, &cfg, &params, 1, 20_000)?;

    let last: Vec<f64> = (0..data.n_replications()).map(|j| data.trajectories[[0, j, 100, 0]]).collect();
    let n = last.len() as f64;
    let mean = last.iter().sum::<f64>() / n;
    let var = last.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t: f64 = 0.1;
    println!("E[S_t]   simulated {mean:.5}  exact {:.5}", (mu * t).exp());
    println!("Var[S_t] simulated {var:.6}  exact {:.6}", (2.0 * mu * t).exp() * ((sigma * sigma * t).exp() - 1.0));
    Ok(())
}
