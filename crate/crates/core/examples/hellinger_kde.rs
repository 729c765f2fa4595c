//! Hellinger distance between N(0,1) and N(1,1): analytic densities versus
//! kernel density estimates from samples.

use dpc::eval::{hellinger, hellinger_samples, linspace, PdfEstimate};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> dpc::Result<()> {
    let pdf = |mu: f64| move |y: f64| (-(y - mu).powi(2) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let grid = linspace(-8.0, 9.0, 2001);
    let p = PdfEstimate::from_fn(grid.clone(), pdf(0.0))?;
    let q = PdfEstimate::from_fn(grid, pdf(1.0))?;
    println!("closed form       {:.4}", (1.0 - (-1.0f64 / 8.0).exp()).sqrt());
    println!("analytic on grid  {:.4}", hellinger(&p, &q)?);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for n in [1_000, 10_000, 100_000] {
        let a: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(n).collect();
        let b: Vec<f64> = Normal::new(1.0, 1.0).unwrap().sample_iter(&mut rng).take(n).collect();
        println!("KDE, n = {n:>6}    {:.4}", hellinger_samples(&a, &b, 512)?);
    }
    Ok(())
}
