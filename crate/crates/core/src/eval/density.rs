//! Gaussian kernel density estimates and the Hellinger distance between them.

use crate::error::{DpcError, Result};

/// A density tabulated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfEstimate {
    /// Strictly increasing evaluation points.
    pub grid: Vec<f64>,
    /// Nonnegative values, integrating to one by the trapezoid rule.
    pub density: Vec<f64>,
    /// Kernel bandwidth (zero for an analytic density or a spike).
    pub bandwidth: f64,
    pub n_samples: usize,
}

/// `∫ f dy` by the trapezoid rule.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1]))
        .sum()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(DpcError::Contract("evaluation grid must be finite, strictly increasing, with ≥ 2 points".into()));
    }
    Ok(())
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|k| if k + 1 == n { hi } else { lo + step * k as f64 }).collect()
}

fn sample_std(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    if samples.len() < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Silverman's rule of thumb, `1.06 σ̂ n^(−1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    1.06 * sample_std(samples) * (samples.len() as f64).powf(-0.2)
}

/// Shared grid over pooled sample sets: `[min − 3σ̂, max + 3σ̂]`.
pub fn pooled_grid(sets: &[&[f64]], n_points: usize) -> Result<Vec<f64>> {
    let pooled: Vec<f64> = sets.iter().flat_map(|s| s.iter().copied()).collect();
    if pooled.is_empty() {
        return Err(DpcError::EmptySamples);
    }
    let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sd = sample_std(&pooled);
    // all samples equal: any interval around the value will do
    let pad = if sd > 0.0 { 3.0 * sd } else { lo.abs().max(1.0) };
    Ok(linspace(lo - pad, hi + pad, n_points.max(2)))
}

impl PdfEstimate {
    /// Tabulate an analytic density (no renormalization).
    pub fn from_fn(grid: Vec<f64>, pdf: impl Fn(f64) -> f64) -> Result<PdfEstimate> {
        check_grid(&grid)?;
        let density = grid.iter().map(|&y| pdf(y)).collect();
        Ok(PdfEstimate { grid, density, bandwidth: 0.0, n_samples: 0 })
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Linear interpolation, zero outside the grid.
    pub fn at(&self, y: f64) -> f64 {
        let g = &self.grid;
        if y < g[0] || y > g[g.len() - 1] {
            return 0.0;
        }
        let k = g.partition_point(|&v| v <= y).clamp(1, g.len() - 1);
        let w = (y - g[k - 1]) / (g[k] - g[k - 1]);
        self.density[k - 1] * (1.0 - w) + self.density[k] * w
    }

    /// This density interpolated onto `grid` and renormalized.
    pub fn resample(&self, grid: &[f64]) -> Result<PdfEstimate> {
        check_grid(grid)?;
        let mut density: Vec<f64> = grid.iter().map(|&y| self.at(y)).collect();
        let mass = trapezoid(grid, &density);
        if mass <= 0.0 {
            return Err(DpcError::Contract("density has no mass on the target grid".into()));
        }
        density.iter_mut().for_each(|v| *v /= mass);
        Ok(PdfEstimate { grid: grid.to_vec(), density, bandwidth: self.bandwidth, n_samples: self.n_samples })
    }
}

/// Gaussian KDE with Silverman bandwidth (floored at the grid spacing),
/// renormalized to unit trapezoid mass on `grid`. Identical samples become
/// a spike on the grid node nearest to their common value.
pub fn kde(samples: &[f64], grid: &[f64]) -> Result<PdfEstimate> {
    if samples.is_empty() {
        return Err(DpcError::EmptySamples);
    }
    check_grid(grid)?;
    let n = samples.len();
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // a bandwidth narrower than the grid spacing cannot be resolved on the
    // grid, so it is floored at the finest spacing
    let spacing = grid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let h = if hi > lo { silverman_bandwidth(samples).max(spacing) } else { 0.0 };
    let mut density = vec![0.0; grid.len()];
    if h > 0.0 {
        let norm = 1.0 / (n as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        // contributions beyond 40 bandwidths underflow to zero anyway
        let reach = 40.0 * h;
        for (g, out) in grid.iter().zip(density.iter_mut()) {
            let lo = sorted.partition_point(|&s| s < g - reach);
            let hi = sorted.partition_point(|&s| s <= g + reach);
            let s: f64 = sorted[lo..hi].iter().map(|&x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum();
            *out = s * norm;
        }
    } else {
        let v = samples[0];
        if v < grid[0] || v > grid[grid.len() - 1] {
            return Err(DpcError::Contract(format!("spike at {v} lies outside the evaluation grid")));
        }
        let k = grid.partition_point(|&g| g < v).min(grid.len() - 1);
        let k = if k > 0 && v - grid[k - 1] < grid[k] - v { k - 1 } else { k };
        density[k] = 1.0;
    }
    let mass = trapezoid(grid, &density);
    if mass > 0.0 {
        density.iter_mut().for_each(|v| *v /= mass);
    } else {
        return Err(DpcError::Contract("samples lie entirely outside the evaluation grid".into()));
    }
    Ok(PdfEstimate { grid: grid.to_vec(), density, bandwidth: h, n_samples: n })
}

/// `sqrt(½ ∫ (√P − √Q)² dy)` by the trapezoid rule on `p`'s grid; `q` is
/// resampled onto it if the grids differ.
pub fn hellinger(p: &PdfEstimate, q: &PdfEstimate) -> Result<f64> {
    let resampled;
    let q = if q.grid == p.grid {
        q
    } else {
        resampled = q.resample(&p.grid)?;
        &resampled
    };
    if q.grid.len() != p.grid.len() {
        return Err(DpcError::Contract("grid mismatch after resampling".into()));
    }
    let sq: Vec<f64> = p
        .density
        .iter()
        .zip(&q.density)
        .map(|(a, b)| (a.max(0.0).sqrt() - b.max(0.0).sqrt()).powi(2))
        .collect();
    Ok((0.5 * trapezoid(&p.grid, &sq)).max(0.0).sqrt())
}

/// Hellinger distance between two sample sets on their pooled grid.
pub fn hellinger_samples(a: &[f64], b: &[f64], grid_points: usize) -> Result<f64> {
    let grid = pooled_grid(&[a, b], grid_points)?;
    hellinger(&kde(a, &grid)?, &kde(b, &grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_pdf(mu: f64) -> impl Fn(f64) -> f64 {
        move |y| (-(y - mu).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn analytic_gaussian_pair() {
        let grid = linspace(-10.0, 11.0, 2001);
        let p = PdfEstimate::from_fn(grid.clone(), normal_pdf(0.0)).unwrap();
        let q = PdfEstimate::from_fn(grid, normal_pdf(1.0)).unwrap();
        let want = (1.0 - (-1.0f64 / 8.0).exp()).sqrt();
        assert!((want - 0.3425).abs() < 1e-3);
        assert!((hellinger(&p, &q).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn kde_of_standard_normal() {
        let samples = normals(100_000, 1);
        let grid = pooled_grid(&[&samples], 512).unwrap();
        let pdf = kde(&samples, &grid).unwrap();
        assert!((pdf.at(0.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 0.02);
        assert!((pdf.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_samples_make_a_unit_spike() {
        let grid = linspace(0.0, 4.0, 9);
        let pdf = kde(&[1.2; 10], &grid).unwrap();
        assert!((pdf.integral() - 1.0).abs() < 1e-12);
        let peak = pdf.density.iter().position(|&v| v > 0.0).unwrap();
        assert_eq!(grid[peak], 1.0);
        assert_eq!(pdf.density.iter().filter(|&&v| v > 0.0).count(), 1);
        assert!(kde(&[9.0; 3], &grid).is_err());
    }

    #[test]
    fn kde_is_translation_equivariant() {
        let samples = normals(500, 2);
        let grid = linspace(-5.0, 5.0, 101);
        let c = 2.5;
        let shifted: Vec<f64> = samples.iter().map(|x| x + c).collect();
        let shifted_grid: Vec<f64> = grid.iter().map(|g| g + c).collect();
        let a = kde(&samples, &grid).unwrap();
        let b = kde(&shifted, &shifted_grid).unwrap();
        for (x, y) in a.density.iter().zip(&b.density) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_samples_and_bad_grids_are_errors() {
        assert!(matches!(kde(&[], &[0.0, 1.0]), Err(DpcError::EmptySamples)));
        assert!(kde(&[0.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(kde(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn identical_and_disjoint_densities() {
        let grid = linspace(0.0, 10.0, 1001);
        let p = PdfEstimate::from_fn(grid.clone(), |y| if (1.0..=2.0).contains(&y) { 1.0 } else { 0.0 }).unwrap();
        let q = PdfEstimate::from_fn(grid.clone(), |y| if (5.0..=6.0).contains(&y) { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(hellinger(&p, &p).unwrap(), 0.0);
        let p = p.resample(&grid).unwrap();
        let q = q.resample(&grid).unwrap();
        assert!((hellinger(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resampling_onto_a_different_grid() {
        let p = PdfEstimate::from_fn(linspace(-8.0, 8.0, 801), normal_pdf(0.0)).unwrap();
        let q = PdfEstimate::from_fn(linspace(-7.0, 9.0, 333), normal_pdf(1.0)).unwrap();
        let want = (1.0 - (-1.0f64 / 8.0).exp()).sqrt();
        assert!((hellinger(&p, &q).unwrap() - want).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn hellinger_is_symmetric_and_bounded(
            a in proptest::collection::vec(-3.0..3.0f64, 2..40),
            b in proptest::collection::vec(-1.0..5.0f64, 2..40),
        ) {
            let grid = pooled_grid(&[&a, &b], 256).unwrap();
            let (p, q) = (kde(&a, &grid).unwrap(), kde(&b, &grid).unwrap());
            let (h1, h2) = (hellinger(&p, &q).unwrap(), hellinger(&q, &p).unwrap());
            prop_assert_eq!(h1, h2);
            prop_assert!((0.0..=1.0 + 1e-9).contains(&h1));
            prop_assert!((p.integral() - 1.0).abs() < 1e-3);
            prop_assert!(p.density.iter().all(|&v| v >= 0.0));
        }
    }
}
