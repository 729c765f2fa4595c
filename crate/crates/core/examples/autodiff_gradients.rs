//! Reverse-mode gradients of a small MLP loss checked against central
//! differences, followed by a few Adam steps.

use dpc::autodiff::{Adam, Mlp, Tape};
use ndarray::Array2;
use rand::SeedableRng;

fn loss(net: &Mlp, x: &Array2<f64>) -> f64 {
    net.forward(x).unwrap().mapv(|v| v * v).sum()
}

fn main() -> dpc::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut net = Mlp::new(&[3, 16, 16, 2], &mut rng);
    let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 0.3 + j as f64 * 0.1);

    let tape = Tape::new();
    let vars = net.register(&tape);
    let out = vars.forward(tape.constant(x.clone()))?;
    let l = (out * out).sum();
    let grads = tape.backward(l)?;
    let analytic = grads.get_or_zeros(vars.vars()[0]);

    let (h, mut worst) = (1e-5, 0.0f64);
    for ((i, j), g) in analytic.indexed_iter() {
        let mut plus = net.clone();
        plus.layers[0].weight[[i, j]] += h;
        let mut minus = net.clone();
        minus.layers[0].weight[[i, j]] -= h;
        let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
        worst = worst.max((g - fd).abs() / fd.abs().max(1e-8));
    }
    println!("first-layer weights: worst relative gradient error {worst:.2e}");

    let mut adam = Adam::new(&net.tensors(), 1e-2);
    for step in 0..5 {
        let tape = Tape::new();
        let vars = net.register(&tape);
        let out = vars.forward(tape.constant(x.clone()))?;
        let l = (out * out).sum();
        let value = l.item();
        let grads = tape.backward(l)?;
        let g: Vec<Array2<f64>> = vars.vars().into_iter().map(|v| grads.get_or_zeros(v)).collect();
        drop(grads);
        drop(tape);
        adam.step(&mut net.tensors_mut(), &g)?;
        println!("step {step}: loss {value:.5}");
    }
    Ok(())
}
