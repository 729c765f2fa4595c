//! Squared-exponential kernels and the MMD / conditional MMD losses.
//!
//! The conditional loss is the squared Hilbert–Schmidt distance between the
//! regularized conditional embedding operators of a target set `d` and a
//! predicted set `s`:
//!
//! ```text
//! Tr(K_d K̃_d⁻¹ L_d K̃_d⁻¹) + Tr(K_s K̃_s⁻¹ L_s K̃_s⁻¹) − 2 Tr(K_sd K̃_d⁻¹ L_ds K̃_s⁻¹)
//! ```
//!
//! with `K` the input (conditioning) grams, `L` the output grams and
//! `K̃ = K + λI`. Every `K̃⁻¹` product is a Cholesky solve on the tape.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{pairwise_sq_dist, Tape, Var};
use crate::error::{DpcError, Result};

/// Kernel hyperparameters, stored as logarithms so they stay positive
/// under gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub log_lambda: f64,
    pub log_beta_in: f64,
    pub log_beta_out: f64,
}

/// Initial λ.
pub const DEFAULT_LAMBDA: f64 = 0.01;
/// Initial input bandwidth on standardized parameters. The narrow input
/// kernel keeps the conditional embeddings of distinct parameter samples
/// nearly decoupled; with β_in = 1 the regularized inverse amplifies
/// sampling noise until the loss barely separates the true model from an
/// ablated one.
pub const DEFAULT_BETA_IN: f64 = 0.1;
/// Initial output bandwidth on standardized trajectory features.
pub const DEFAULT_BETA_OUT: f64 = 1.0;

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams::new(DEFAULT_LAMBDA, DEFAULT_BETA_IN, DEFAULT_BETA_OUT)
    }
}

impl KernelParams {
    pub fn new(lambda: f64, beta_in: f64, beta_out: f64) -> Self {
        KernelParams {
            log_lambda: lambda.ln(),
            log_beta_in: beta_in.ln(),
            log_beta_out: beta_out.ln(),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    pub fn beta_in(&self) -> f64 {
        self.log_beta_in.exp()
    }

    pub fn beta_out(&self) -> f64 {
        self.log_beta_out.exp()
    }

    /// Put the three log-parameters on `tape` as trainable scalars.
    pub fn register<'t>(&self, tape: &'t Tape) -> KernelVars<'t> {
        KernelVars {
            log_lambda: tape.scalar(self.log_lambda),
            log_beta_in: tape.scalar(self.log_beta_in),
            log_beta_out: tape.scalar(self.log_beta_out),
        }
    }

    /// The same values as constants (excluded from differentiation).
    pub fn constants<'t>(&self, tape: &'t Tape) -> KernelVars<'t> {
        KernelVars {
            log_lambda: tape.constant_scalar(self.log_lambda),
            log_beta_in: tape.constant_scalar(self.log_beta_in),
            log_beta_out: tape.constant_scalar(self.log_beta_out),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KernelVars<'t> {
    pub log_lambda: Var<'t>,
    pub log_beta_in: Var<'t>,
    pub log_beta_out: Var<'t>,
}

impl<'t> KernelVars<'t> {
    pub fn vars(&self) -> [Var<'t>; 3] {
        [self.log_lambda, self.log_beta_in, self.log_beta_out]
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(DpcError::Contract(format!("kernel bandwidth must be positive, got {beta}")))
    }
}

fn check_cols(context: &str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(DpcError::Dimension { context: context.into(), expected: a, got: b })
    }
}

/// `exp(−‖aᵢ − bⱼ‖² / (2β²))` for every pair of rows.
pub fn se_kernel_gram(a: &Array2<f64>, b: &Array2<f64>, beta: f64) -> Result<Array2<f64>> {
    check_beta(beta)?;
    check_cols("kernel gram feature dimension", a.ncols(), b.ncols())?;
    let c = 1.0 / (2.0 * beta * beta);
    Ok(pairwise_sq_dist(a.view(), b.view()).mapv(|d| (-d * c).exp()))
}

/// Biased (V-statistic) squared MMD between two sample sets.
pub fn mmd2(x: &Array2<f64>, y: &Array2<f64>, beta: f64) -> Result<f64> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(DpcError::EmptySamples);
    }
    let kxx = se_kernel_gram(x, x, beta)?.mean().unwrap();
    let kyy = se_kernel_gram(y, y, beta)?.mean().unwrap();
    let kxy = se_kernel_gram(x, y, beta)?.mean().unwrap();
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Gram matrix on the tape with bandwidth `exp(log_beta)`.
pub fn gram_var<'t>(a: Var<'t>, b: Var<'t>, log_beta: Var<'t>) -> Var<'t> {
    // −1/(2β²) = −½·exp(−2 log β)
    let neg_c = log_beta.scale(-2.0).exp().scale(-0.5);
    a.sq_dist(b).mul_scalar(neg_c).exp()
}

/// Conditional MMD on the tape. `inputs_*` are the conditioning variables,
/// `outputs_*` the responses; `t` is the target data, `p` the prediction.
pub fn cmmd2_var<'t>(
    tape: &'t Tape,
    inputs_t: Var<'t>,
    outputs_t: Var<'t>,
    inputs_p: Var<'t>,
    outputs_p: Var<'t>,
    kernel: &KernelVars<'t>,
) -> Result<Var<'t>> {
    let (n, n_p) = (inputs_t.shape().0, inputs_p.shape().0);
    if n == 0 || n_p == 0 {
        return Err(DpcError::EmptySamples);
    }
    check_cols("cmmd target rows", n, outputs_t.shape().0)?;
    check_cols("cmmd predicted rows", n_p, outputs_p.shape().0)?;
    check_cols("cmmd input features", inputs_t.shape().1, inputs_p.shape().1)?;
    check_cols("cmmd output features", outputs_t.shape().1, outputs_p.shape().1)?;

    let k_d = gram_var(inputs_t, inputs_t, kernel.log_beta_in);
    let k_s = gram_var(inputs_p, inputs_p, kernel.log_beta_in);
    let k_sd = gram_var(inputs_p, inputs_t, kernel.log_beta_in);
    let l_d = gram_var(outputs_t, outputs_t, kernel.log_beta_out);
    let l_s = gram_var(outputs_p, outputs_p, kernel.log_beta_out);
    let l_ds = gram_var(outputs_t, outputs_p, kernel.log_beta_out);

    let lambda = kernel.log_lambda.exp();
    let singular = |e: DpcError| match e {
        DpcError::SingularGram { condition, .. } => {
            DpcError::SingularGram { lambda: lambda.item(), condition }
        }
        other => other,
    };
    // one factorization per regularized gram: K̃_d⁻¹ [K_d | L_d | L_ds]
    let sol_d = k_d.add_diag(lambda).solve_spd(tape.hconcat(&[k_d, l_d, l_ds])).map_err(singular)?;
    // K̃_s⁻¹ [K_s | L_s | K_sd]
    let sol_s = k_s.add_diag(lambda).solve_spd(tape.hconcat(&[k_s, l_s, k_sd])).map_err(singular)?;

    let term_d = sol_d.slice_cols(0, n).trace_matmul(sol_d.slice_cols(n, 2 * n));
    let term_s = sol_s.slice_cols(0, n_p).trace_matmul(sol_s.slice_cols(n_p, 2 * n_p));
    // Tr(K_sd K̃_d⁻¹ L_ds K̃_s⁻¹) = Tr((K̃_s⁻¹ K_sd)(K̃_d⁻¹ L_ds))
    let cross = sol_s.slice_cols(2 * n_p, 2 * n_p + n).trace_matmul(sol_d.slice_cols(2 * n, 2 * n + n_p));
    Ok(term_d + term_s - cross.scale(2.0))
}

/// Conditional MMD on plain values.
pub fn cmmd2(
    inputs_t: &Array2<f64>,
    outputs_t: &Array2<f64>,
    inputs_p: &Array2<f64>,
    outputs_p: &Array2<f64>,
    kernel: &KernelParams,
) -> Result<f64> {
    check_beta(kernel.beta_in())?;
    check_beta(kernel.beta_out())?;
    let tape = Tape::new();
    let vars = kernel.constants(&tape);
    let loss = cmmd2_var(
        &tape,
        tape.constant(inputs_t.clone()),
        tape.constant(outputs_t.clone()),
        tape.constant(inputs_p.clone()),
        tape.constant(outputs_p.clone()),
        &vars,
    )?;
    Ok(loss.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Axis};
    use proptest::prelude::*;

    /// Gauss–Jordan inverse with partial pivoting.
    fn inverse(a: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let mut m = ndarray::concatenate(Axis(1), &[a.view(), Array2::<f64>::eye(n).view()]).unwrap();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs())).unwrap();
            for k in 0..2 * n {
                m.swap([col, k], [pivot, k]);
            }
            let p = m[[col, col]];
            m.row_mut(col).mapv_inplace(|v| v / p);
            for r in 0..n {
                if r != col {
                    let f = m[[r, col]];
                    let pivot_row = m.row(col).to_owned();
                    m.row_mut(r).zip_mut_with(&pivot_row, |v, &q| *v -= f * q);
                }
            }
        }
        m.slice(ndarray::s![.., n..]).to_owned()
    }

    fn gram(a: &Array2<f64>, b: &Array2<f64>, beta: f64) -> Array2<f64> {
        Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
            let d: f64 = a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y).powi(2)).sum();
            (-d / (2.0 * beta * beta)).exp()
        })
    }

    fn trace(m: &Array2<f64>) -> f64 {
        m.diag().sum()
    }

    /// Direct evaluation with explicit inverses and explicit products.
    fn oracle(xt: &Array2<f64>, yt: &Array2<f64>, xp: &Array2<f64>, yp: &Array2<f64>, k: &KernelParams) -> f64 {
        let (lam, bi, bo) = (k.lambda(), k.beta_in(), k.beta_out());
        let kd = gram(xt, xt, bi);
        let ks = gram(xp, xp, bi);
        let ksd = gram(xp, xt, bi);
        let ld = gram(yt, yt, bo);
        let ls = gram(yp, yp, bo);
        let lds = gram(yt, yp, bo);
        let id = inverse(&(&kd + &(Array2::<f64>::eye(kd.nrows()) * lam)));
        let is = inverse(&(&ks + &(Array2::<f64>::eye(ks.nrows()) * lam)));
        trace(&kd.dot(&id).dot(&ld).dot(&id)) + trace(&ks.dot(&is).dot(&ls).dot(&is))
            - 2.0 * trace(&ksd.dot(&id).dot(&lds).dot(&is))
    }

    fn column(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn gram_at_root_two_beta_is_inverse_e() {
        let beta = 0.7;
        let a = arr2(&[[0.0, 0.0]]);
        let b = arr2(&[[beta, beta]]);
        let k = se_kernel_gram(&a, &b, beta).unwrap();
        assert!((k[[0, 0]] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(se_kernel_gram(&a, &b, 0.0).is_err());
        assert!(se_kernel_gram(&a, &arr2(&[[1.0]]), 1.0).is_err());
    }

    #[test]
    fn mmd_of_two_points() {
        let beta = 1.3;
        let x = arr2(&[[0.0]]);
        let y = arr2(&[[2.0f64.sqrt() * beta]]);
        let v = mmd2(&x, &y, beta).unwrap();
        assert!((v - (2.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-14);
        assert_eq!(mmd2(&x, &x, beta).unwrap(), 0.0);
    }

    #[test]
    fn toy_case_matches_explicit_inverse() {
        let x = column(&[0.0, 1.0]);
        let (yt, yp) = (column(&[0.0, 1.0]), column(&[0.0, 2.0]));
        let k = KernelParams::new(0.1, 1.0, 1.0);
        let got = cmmd2(&x, &yt, &x, &yp, &k).unwrap();
        let want = oracle(&x, &yt, &x, &yp, &k);
        assert!(want > 0.0);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn identical_datasets_give_zero() {
        let x = arr2(&[[0.1, 0.3], [-0.5, 1.0], [0.2, 0.2]]);
        let y = arr2(&[[1.0], [0.0], [-1.0]]);
        let v = cmmd2(&x, &y, &x, &y, &KernelParams::default()).unwrap();
        assert!(v.abs() < 1e-10, "{v}");
    }

    #[test]
    fn large_lambda_shrinks_towards_zero() {
        let x = column(&[0.0, 0.5, 1.0]);
        let (yt, yp) = (column(&[0.0, 1.0, 2.0]), column(&[1.0, -1.0, 0.5]));
        let v: Vec<f64> = [1e-2, 1e2, 1e4]
            .iter()
            .map(|&lam| cmmd2(&x, &yt, &x, &yp, &KernelParams::new(lam, 1.0, 1.0)).unwrap())
            .collect();
        assert!(v[0] > v[1] && v[1] > v[2] && v[2] >= 0.0, "{v:?}");
        assert!(v[2] < 1e-6);
    }

    #[test]
    fn toy_case_gradients_match_finite_differences() {
        let x = column(&[0.0, 1.0]);
        let yt = column(&[0.0, 1.0]);
        let yp = column(&[0.0, 2.0]);
        let k = KernelParams::new(0.1, 1.0, 1.0);
        let tape = Tape::new();
        let (yp_var, kv) = (tape.var(yp.clone()), k.register(&tape));
        let loss = cmmd2_var(&tape, tape.constant(x.clone()), tape.constant(yt.clone()), tape.constant(x.clone()), yp_var, &kv)
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);

        let gy = grads.get(yp_var).unwrap();
        for r in 0..2 {
            let f = |d: f64| {
                let mut y = yp.clone();
                y[[r, 0]] += d;
                cmmd2(&x, &yt, &x, &y, &k).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            assert!(rel(fd, gy[[r, 0]]) < 1e-5 || (fd - gy[[r, 0]]).abs() < 1e-9, "row {r}: {fd} vs {}", gy[[r, 0]]);
        }
        for (which, var) in kv.vars().into_iter().enumerate() {
            let f = |d: f64| {
                let mut kk = k;
                match which {
                    0 => kk.log_lambda += d,
                    1 => kk.log_beta_in += d,
                    _ => kk.log_beta_out += d,
                }
                cmmd2(&x, &yt, &x, &yp, &kk).unwrap()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            let g = grads.get(var).unwrap()[[0, 0]];
            assert!(rel(fd, g) < 1e-5, "hyperparameter {which}: {fd} vs {g}");
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let x = column(&[0.0, 1.0]);
        let y3 = column(&[0.0, 1.0, 2.0]);
        assert!(matches!(
            cmmd2(&x, &y3, &x, &x, &KernelParams::default()),
            Err(DpcError::Dimension { .. })
        ));
    }

    fn dataset(max_rows: usize) -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
        (1..=max_rows, 1..=2usize, 1..=2usize).prop_flat_map(|(n, dx, dy)| {
            (
                proptest::collection::vec(-2.0..2.0f64, n * dx)
                    .prop_map(move |v| Array2::from_shape_vec((n, dx), v).unwrap()),
                proptest::collection::vec(-2.0..2.0f64, n * dy)
                    .prop_map(move |v| Array2::from_shape_vec((n, dy), v).unwrap()),
            )
        })
    }

    proptest! {
        #[test]
        fn trace_form_matches_oracle_and_is_symmetric(
            (xt, yt) in dataset(6),
            (xp0, yp0) in dataset(6),
            log_lambda in -3.0..1.0f64,
            log_bi in -0.5..0.5f64,
            log_bo in -0.5..0.5f64,
        ) {
            // align feature dimensions of the predicted set with the target set
            let xp = Array2::from_shape_fn((xp0.nrows(), xt.ncols()), |(i, j)| xp0[[i, j % xp0.ncols()]]);
            let yp = Array2::from_shape_fn((yp0.nrows(), yt.ncols()), |(i, j)| yp0[[i, j % yp0.ncols()]]);
            let k = KernelParams { log_lambda, log_beta_in: log_bi, log_beta_out: log_bo };
            let got = cmmd2(&xt, &yt, &xp, &yp, &k).unwrap();
            let want = oracle(&xt, &yt, &xp, &yp, &k);
            prop_assert!((got - want).abs() < 1e-10, "{} vs {}", got, want);
            prop_assert!(got >= -1e-9);
            let swapped = cmmd2(&xp, &yp, &xt, &yt, &k).unwrap();
            prop_assert!((got - swapped).abs() < 1e-10);
        }
    }
}
