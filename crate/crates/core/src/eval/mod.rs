//! Distributional evaluation: Hellinger distances between QoI marginals of
//! each method and Monte Carlo ground truth, averaged over time and test
//! points.

mod density;

pub use density::{
    hellinger, hellinger_samples, kde, linspace, pooled_grid, silverman_bandwidth, trapezoid, PdfEstimate,
};

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{BenchmarkName, BenchmarkSpec, Regime};
use crate::dpc::DpcModel;
use crate::error::{DpcError, Result};
use crate::rng::{self, Domain};
use crate::sde::{qoi_ensemble, ParamSampler, QoiEnsemble, SdeModel};

/// The three compared surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dpc,
    DataOnly,
    PhysicsOnly,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dpc, Method::DataOnly, Method::PhysicsOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dpc => "dpc",
            Method::DataOnly => "data_only",
            Method::PhysicsOnly => "physics_only",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Equally spaced evaluation times in `[Δt, horizon_factor · window]`.
    pub n_times: usize,
    pub horizon_factor: f64,
    /// Fresh parameter points `ξ*` (never seen in training).
    pub n_test_points: usize,
    /// Ground-truth Monte Carlo paths per test point.
    pub mc_paths: usize,
    /// Paths per test point for each compared method.
    pub model_paths: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_times: 20,
            horizon_factor: 2.0,
            n_test_points: 5,
            mc_paths: 10_000,
            model_paths: 1_000,
            grid_points: 512,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_times == 0 || self.n_test_points == 0 {
            return Err(DpcError::config("evaluation needs at least one time and one test point"));
        }
        if self.mc_paths < 2 || self.model_paths < 2 {
            return Err(DpcError::config("evaluation needs at least two paths per source"));
        }
        if !(self.horizon_factor > 0.0) || self.grid_points < 2 {
            return Err(DpcError::config("invalid evaluation horizon or grid"));
        }
        Ok(())
    }

    /// Evaluation steps for a training window of `window_steps`: equally
    /// spaced from step 1 to `horizon_factor · window_steps`, rounded.
    pub fn steps(&self, window_steps: usize) -> Vec<usize> {
        let last = (self.horizon_factor * window_steps as f64).round().max(1.0);
        if self.n_times == 1 {
            return vec![last as usize];
        }
        linspace(1.0, last, self.n_times).iter().map(|s| s.round() as usize).collect()
    }
}

/// Hellinger distances of one method, averaged over test points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub benchmark: BenchmarkName,
    pub regime: Regime,
    pub times: Vec<f64>,
    /// `H(t)` at each time, averaged over test points.
    pub hellinger: Vec<f64>,
    /// Mean of `H(t)` over times.
    pub epsilon: f64,
    /// Sum of `H(t)` over times.
    pub epsilon_sum: f64,
    /// Paths that diverged, over all test points.
    pub diverged: usize,
}

/// `(ε, H)` from per-time model and reference samples.
pub fn time_averaged_error(model: &[Vec<f64>], truth: &[Vec<f64>], grid_points: usize) -> Result<(f64, Vec<f64>)> {
    if model.len() != truth.len() || model.is_empty() {
        return Err(DpcError::Dimension {
            context: "evaluation times".into(),
            expected: truth.len(),
            got: model.len(),
        });
    }
    let h = model
        .iter()
        .zip(truth)
        .map(|(m, t)| hellinger_samples(m, t, grid_points))
        .collect::<Result<Vec<f64>>>()?;
    Ok((h.iter().sum::<f64>() / h.len() as f64, h))
}

/// Where the compared samples come from.
pub enum Source<'a> {
    Corrected(&'a DpcModel),
    Physics(&'a dyn SdeModel),
}

/// Parameter points for evaluation, drawn from their own stream.
pub fn test_points(spec: &BenchmarkSpec, n: usize, seed: u64) -> Array2<f64> {
    let k = spec.dim_params();
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let xi = spec.param_dists.sample(&mut rng::stream(seed, Domain::TestPoints, i as u64));
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&xi));
    }
    out
}

/// Per-(test point, time) sample sets of ground truth and each method.
pub struct EvalSamples {
    pub steps: Vec<usize>,
    pub test_points: Array2<f64>,
    pub truth: Vec<QoiEnsemble>,
    pub methods: Vec<(Method, Vec<QoiEnsemble>)>,
}

/// Draw all samples needed for a comparison. Each source sees the same
/// test points and, for a given test point, the same Brownian seed.
pub fn draw_samples(
    spec: &BenchmarkSpec,
    sources: &[(Method, Source<'_>)],
    cfg: &EvalConfig,
) -> Result<EvalSamples> {
    cfg.validate()?;
    let steps = cfg.steps(spec.n_steps);
    let points = test_points(spec, cfg.n_test_points, cfg.seed);
    let truth_model = spec.true_model();
    let qoi = spec.qoi;
    let init = spec.initial_state();
    let mut truth = vec![];
    for (i, xi) in points.rows().into_iter().enumerate() {
        let xi = xi.to_vec();
        let x0 = init.resolve(&xi);
        let seed = rng::derive_seed(cfg.seed, &[1, i as u64]);
        let ens = qoi_ensemble(&truth_model, spec.dt, &xi, &x0, cfg.mc_paths, &steps, |x| qoi.eval(x), seed)?;
        if ens.diverged > 0 {
            log::warn!("ground truth at test point {i}: {} of {} paths diverged", ens.diverged, cfg.mc_paths);
        }
        truth.push(ens);
    }
    let mut methods = vec![];
    for (method, source) in sources {
        let mut per_point = vec![];
        for (i, xi) in points.rows().into_iter().enumerate() {
            let xi = xi.to_vec();
            let x0 = init.resolve(&xi);
            let seed = rng::derive_seed(cfg.seed, &[2, i as u64]);
            let ens = match source {
                Source::Corrected(model) => model.qoi_ensemble(&xi, &x0, cfg.model_paths, &steps, qoi, seed)?,
                Source::Physics(model) => {
                    qoi_ensemble(*model, spec.dt, &xi, &x0, cfg.model_paths, &steps, |x| qoi.eval(x), seed)?
                }
            };
            if ens.diverged > 0 {
                log::warn!("{method} at test point {i}: {} of {} paths diverged", ens.diverged, cfg.model_paths);
            }
            per_point.push(ens);
        }
        methods.push((*method, per_point));
    }
    Ok(EvalSamples { steps, test_points: points, truth, methods })
}

/// Hellinger distance of one sample set against the truth, with `H = 1`
/// when fewer than two paths survived.
fn cell_distance(model: &[f64], truth: &[f64], grid_points: usize) -> Result<f64> {
    if model.len() < 2 || truth.len() < 2 {
        return Ok(1.0);
    }
    hellinger_samples(model, truth, grid_points)
}

/// Reduce drawn samples to one report per method.
pub fn reports(spec: &BenchmarkSpec, regime: Regime, samples: &EvalSamples, grid_points: usize) -> Result<Vec<MethodReport>> {
    let times: Vec<f64> = samples.steps.iter().map(|&s| s as f64 * spec.dt).collect();
    let n_points = samples.truth.len();
    samples
        .methods
        .iter()
        .map(|(method, per_point)| {
            let mut h = vec![0.0; times.len()];
            for (ens, truth) in per_point.iter().zip(&samples.truth) {
                for k in 0..times.len() {
                    h[k] += cell_distance(&ens.samples[k], &truth.samples[k], grid_points)? / n_points as f64;
                }
            }
            let epsilon_sum: f64 = h.iter().sum();
            Ok(MethodReport {
                method: *method,
                benchmark: spec.name,
                regime,
                times: times.clone(),
                epsilon: epsilon_sum / h.len() as f64,
                epsilon_sum,
                hellinger: h,
                diverged: per_point.iter().map(|e| e.diverged).sum(),
            })
        })
        .collect()
}

/// Draw samples and reduce them in one go.
pub fn evaluate(
    spec: &BenchmarkSpec,
    regime: Regime,
    sources: &[(Method, Source<'_>)],
    cfg: &EvalConfig,
) -> Result<Vec<MethodReport>> {
    reports(spec, regime, &draw_samples(spec, sources, cfg)?, cfg.grid_points)
}

/// Reference training-set size for the normalized error.
pub const REFERENCE_N: usize = 40;

/// `(N, ε, ε_n)` with `ε_n = ε / ε(N = 40)`.
pub fn normalize_convergence(points: &[(usize, f64)]) -> Result<Vec<(usize, f64, f64)>> {
    let eps0 = points
        .iter()
        .find(|(n, _)| *n == REFERENCE_N)
        .map(|&(_, e)| e)
        .ok_or_else(|| DpcError::config(format!("convergence study must include N = {REFERENCE_N}")))?;
    Ok(points.iter().map(|&(n, e)| (n, e, e / eps0)).collect())
}

pub fn write_hellinger_series(w: &mut impl Write, reports: &[MethodReport]) -> Result<()> {
    writeln!(w, "method,benchmark,regime,t,hellinger")?;
    for r in reports {
        for (t, h) in r.times.iter().zip(&r.hellinger) {
            writeln!(w, "{},{},{},{:.6},{:.6}", r.method, r.benchmark, r.regime, t, h)?;
        }
    }
    Ok(())
}

/// Grid and densities of every method and the truth at one time and test
/// point, for external plotting.
pub fn write_pdf_csv(w: &mut impl Write, samples: &EvalSamples, point: usize, time_index: usize, grid_points: usize) -> Result<()> {
    let truth = &samples.truth[point].samples[time_index];
    let mut sets: Vec<(&str, &[f64])> = vec![("ground_truth", truth.as_slice())];
    for (method, per_point) in &samples.methods {
        sets.push((method.as_str(), per_point[point].samples[time_index].as_slice()));
    }
    let usable: Vec<&[f64]> = sets.iter().map(|(_, s)| *s).filter(|s| s.len() >= 2).collect();
    let grid = pooled_grid(&usable, grid_points)?;
    let densities: Vec<Option<PdfEstimate>> =
        sets.iter().map(|(_, s)| if s.len() >= 2 { kde(s, &grid).ok() } else { None }).collect();
    write!(w, "y")?;
    for (name, _) in &sets {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for (k, y) in grid.iter().enumerate() {
        write!(w, "{y:.6e}")?;
        for d in &densities {
            match d {
                Some(d) => write!(w, ",{:.6e}", d.density[k])?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::make_benchmark;

    #[test]
    fn eval_steps_span_twice_the_window() {
        let steps = EvalConfig::default().steps(100);
        assert_eq!(steps.len(), 20);
        assert_eq!((steps[0], steps[19]), (1, 200));
        assert!(steps.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn truth_against_itself_is_zero_and_independent_ensemble_is_small() {
        let a: Vec<Vec<f64>> = (0..3).map(|k| (0..2000).map(|i| ((i * 7919 + k) % 1000) as f64).collect()).collect();
        let (eps, h) = time_averaged_error(&a, &a, 256).unwrap();
        assert_eq!(eps, 0.0);
        assert_eq!(h.len(), 3);
    }

    #[test]
    fn convergence_normalization() {
        let out = normalize_convergence(&[(10, 0.3), (30, 0.11), (40, 0.1)]).unwrap();
        assert_eq!(out[2].2, 1.0);
        assert!((out[0].2 - 3.0).abs() < 1e-12);
        assert!(normalize_convergence(&[(10, 0.3)]).is_err());
    }

    #[test]
    fn physics_only_report_shape_and_noise_floor() {
        let spec = make_benchmark(BenchmarkName::BlackScholes);
        let truth = spec.true_model();
        let known = spec.known_model(Regime::Drift);
        let cfg = EvalConfig { n_times: 4, n_test_points: 2, mc_paths: 2000, model_paths: 2000, ..EvalConfig::default() };
        let sources = [(Method::PhysicsOnly, Source::Physics(&known)), (Method::Dpc, Source::Physics(&truth))];
        let reports = evaluate(&spec, Regime::Drift, &sources, &cfg).unwrap();
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].hellinger.len(), 4);
        // an independent true ensemble sits at the sampling noise floor
        assert!(reports[1].epsilon < 0.1, "{}", reports[1].epsilon);
        assert!(reports[0].epsilon > 3.0 * reports[1].epsilon, "{} vs {}", reports[0].epsilon, reports[1].epsilon);
        let mut csv = vec![];
        write_hellinger_series(&mut csv, &reports).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
    }
}
