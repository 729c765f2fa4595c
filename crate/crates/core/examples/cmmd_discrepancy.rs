//! Conditional MMD between two conditional sample sets: zero for identical
//! data, growing as the conditional distributions separate.

use dpc::cmmd::{cmmd2, mmd2, KernelParams};
use ndarray::Array2;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn conditional_samples(shift: f64, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let inputs = Array2::from_shape_fn((60, 1), |(i, _)| (i / 20) as f64 - 1.0);
    let outputs = Array2::from_shape_fn((60, 1), |(i, _)| {
        let xi = inputs[[i, 0]];
        let z: f64 = StandardNormal.sample(&mut rng);
        xi + shift * xi * xi + 0.3 * z
    });
    (inputs, outputs)
}

fn main() -> dpc::Result<()> {
    let kernel = KernelParams::default();
    let (xi, y) = conditional_samples(0.0, 1);
    println!("identical sets: cmmd² = {:.2e}", cmmd2(&xi, &y, &xi, &y, &kernel)?);
    for shift in [0.0, 0.25, 0.5, 1.0] {
        let (xp, yp) = conditional_samples(shift, 2);
        println!(
            "shift {shift:4.2}: cmmd² = {:.4}, unconditional mmd² = {:.4}",
            cmmd2(&xi, &y, &xp, &yp, &kernel)?,
            mmd2(&y, &yp, 1.0)?
        );
    }
    Ok(())
}
