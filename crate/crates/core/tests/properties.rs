//! Property tests of the public invariants.

use dpc::benchmarks::{BenchmarkName, Regime};
use dpc::cmmd::{cmmd2, mmd2, KernelParams};
use dpc::eval::{hellinger_samples, kde, linspace, normalize_convergence, trapezoid};
use dpc::pipeline::{generate_dataset, RunConfig};
use ndarray::Array2;
use proptest::prelude::*;

fn samples(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, len)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn small_run(benchmark: BenchmarkName, n_samples: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::paper(benchmark, Regime::Drift).with_seed(seed);
    cfg.data.n_samples = n_samples;
    cfg.data.n_replications = 3;
    cfg.data.n_steps = 6;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hellinger_is_a_symmetric_distance_in_unit_range(a in samples(2..60), b in samples(2..60)) {
        let ab = hellinger_samples(&a, &b, 256).unwrap();
        let ba = hellinger_samples(&b, &a, 256).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab), "{ab}");
        prop_assert!((ab - ba).abs() < 1e-12, "{ab} vs {ba}");
        prop_assert!(hellinger_samples(&a, &a, 256).unwrap() < 1e-12);
    }

    #[test]
    fn kde_has_unit_mass_and_no_negative_density(a in samples(1..80)) {
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min) - 10.0;
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0;
        let grid = linspace(lo, hi, 300);
        let pdf = kde(&a, &grid).unwrap();
        prop_assert!(pdf.density.iter().all(|v| *v >= 0.0 && v.is_finite()));
        prop_assert!((trapezoid(&grid, &pdf.density) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn discrepancies_are_non_negative(
        xt in matrix(6, 2), yt in matrix(6, 3), xp in matrix(5, 2), yp in matrix(5, 3),
        lambda in 1e-3..1.0f64, beta_in in 0.05..3.0f64, beta_out in 0.05..3.0f64,
    ) {
        let kernel = KernelParams::new(lambda, beta_in, beta_out);
        let c = cmmd2(&xt, &yt, &xp, &yp, &kernel).unwrap();
        prop_assert!(c > -1e-9, "{c}");
        let m = mmd2(&yt, &yp, beta_out).unwrap();
        prop_assert!(m > -1e-12 && (m - mmd2(&yp, &yt, beta_out).unwrap()).abs() < 1e-12);
        prop_assert!(cmmd2(&xt, &yt, &xt, &yt, &kernel).unwrap().abs() < 1e-8);
    }

    #[test]
    fn convergence_ratios_are_relative_to_forty(errs in prop::collection::vec(1e-3..1.0f64, 4)) {
        let points: Vec<(usize, f64)> = [10, 20, 30, 40].into_iter().zip(errs.iter().copied()).collect();
        let rows = normalize_convergence(&points).unwrap();
        prop_assert_eq!(rows.len(), 4);
        prop_assert!((rows[3].2 - 1.0).abs() < 1e-15);
        for (n, e, r) in rows {
            prop_assert!((r * errs[3] - e).abs() < 1e-12, "n = {}", n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Smaller training sets are prefixes of larger ones, so a sample-size
    /// study sees nested data.
    #[test]
    fn datasets_nest_across_sample_sizes(seed in any::<u64>(), n in 2usize..6) {
        let big = generate_dataset(&small_run(BenchmarkName::ModifiedOu, 6, seed)).unwrap();
        let small = generate_dataset(&small_run(BenchmarkName::ModifiedOu, n, seed)).unwrap();
        prop_assert_eq!(&big.truncate_samples(n).trajectories, &small.trajectories);
        prop_assert_eq!(&big.truncate_samples(n).params, &small.params);
    }

    /// Generation is a pure function of the seed.
    #[test]
    fn datasets_depend_only_on_the_seed(seed in any::<u64>()) {
        let cfg = small_run(BenchmarkName::Sir, 3, seed);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        prop_assert_eq!(&a.trajectories, &b.trajectories);
        let other = generate_dataset(&small_run(BenchmarkName::Sir, 3, seed.wrapping_add(1))).unwrap();
        prop_assert_ne!(&a.params, &other.params);
    }
}
