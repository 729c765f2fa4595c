use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{DpcError, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    /// Moment buffers shaped like `params`; β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(params: &[&Array2<f64>], lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            second: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
        }
    }

    pub fn n_tensors(&self) -> usize {
        self.first.len()
    }

    /// One update. Any non-finite gradient aborts the whole update before
    /// parameters or moments are touched.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(DpcError::Dimension {
                context: "adam parameter list".into(),
                expected: self.first.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != self.first[k].dim() || g.dim() != self.first[k].dim() {
                return Err(DpcError::Dimension {
                    context: format!("adam tensor {k}"),
                    expected: self.first[k].len(),
                    got: g.len(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(DpcError::NonFiniteGradient { index: k });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            Zip::from(&mut **p)
                .and(&grads[k])
                .and(&mut self.first[k])
                .and(&mut self.second[k])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
