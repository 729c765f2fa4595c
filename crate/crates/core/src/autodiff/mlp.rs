//! Fully connected network with ELU hidden activations and a linear output.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{elu, Tape, Var};
use crate::error::{DpcError, Result};

/// Hidden widths of the correction network.
pub const PAPER_HIDDEN: [usize; 5] = [64, 256, 512, 256, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in × out`.
    pub weight: Array2<f64>,
    /// `1 × out`.
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// He-uniform weights (`U(±√(6/fan_in))`), zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Mlp {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array2::zeros((1, w[1])),
                }
            })
            .collect();
        Mlp { layers }
    }

    /// `d_in → 64 → 256 → 512 → 256 → 64 → d_out`.
    pub fn paper(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Mlp {
        Mlp::new(&Self::layer_sizes(d_in, &PAPER_HIDDEN, d_out), rng)
    }

    pub fn layer_sizes(d_in: usize, hidden: &[usize], d_out: usize) -> Vec<usize> {
        let mut sizes = vec![d_in];
        sizes.extend_from_slice(hidden);
        sizes.push(d_out);
        sizes
    }

    /// Closed-form parameter count of a network with the given layer sizes.
    pub fn count_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    /// Set the output layer to zero so the network outputs exactly zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
    }

    /// Weights and biases in layer order (w₀, b₀, w₁, b₁, …).
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.d_in() {
            return Err(DpcError::Dimension {
                context: "mlp layer 0 input".into(),
                expected: self.d_in(),
                got: cols,
            });
        }
        Ok(())
    }

    /// Batched forward pass without recording.
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if k < last {
                h.mapv_inplace(elu);
            }
        }
        Ok(h)
    }

    /// Put all weights and biases on `tape` as trainable leaves.
    pub fn register<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.var(l.weight.clone()), tape.var(l.bias.clone())))
                .collect(),
        }
    }
}

/// Network parameters recorded on a tape.
pub struct MlpVars<'t> {
    pub layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> MlpVars<'t> {
    pub fn forward(&self, input: Var<'t>) -> Result<Var<'t>> {
        let last = self.layers.len() - 1;
        let mut h = input;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            if h.shape().1 != w.shape().0 {
                return Err(DpcError::Dimension {
                    context: format!("mlp layer {k} input"),
                    expected: w.shape().0,
                    got: h.shape().1,
                });
            }
            h = h.dense(w, b, k < last);
        }
        Ok(h)
    }

    /// Variables in the same order as [`Mlp::tensors`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}
