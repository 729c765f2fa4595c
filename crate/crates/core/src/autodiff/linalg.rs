//! Dense Cholesky factorization and blocked triangular solves.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};

const BLOCK: usize = 64;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Lower-triangular factor `L` with `A = L Lᵀ`, or `None` if `A` is not
/// numerically positive definite.
pub fn cholesky(a: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky of non-square matrix");
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        let (head, mut tail) = l.view_mut().split_at(ndarray::Axis(0), j + 1);
        let row_j = head.row(j);
        for i in 0..n - j - 1 {
            let row_i = tail.row(i);
            let mut v = a[[j + 1 + i, j]];
            for k in 0..j {
                v -= row_i[k] * row_j[k];
            }
            tail[[i, j]] = v / ljj;
        }
    }
    Some(l)
}

/// Outcome of a factorization that may have needed diagonal jitter.
#[derive(Debug, Clone)]
pub struct Factor {
    pub lower: Array2<f64>,
    /// Jitter added to the diagonal (0 when none was needed).
    pub jitter: f64,
}

/// Cholesky with jitter escalation: retry with `1e-10, 1e-9, …, 1e-6`
/// (scaled by the mean diagonal) added to the diagonal.
///
/// On failure returns a cheap condition estimate (ratio of extreme
/// diagonal entries).
pub fn cholesky_with_jitter(a: &ArrayView2<f64>) -> Result<Factor, f64> {
    if let Some(lower) = cholesky(a) {
        return Ok(Factor { lower, jitter: 0.0 });
    }
    let n = a.nrows();
    let diag = a.diag();
    let mean = diag.iter().map(|v| v.abs()).sum::<f64>() / n.max(1) as f64;
    let scale = if mean > 0.0 { mean } else { 1.0 };
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut shifted = a.to_owned();
        for i in 0..n {
            shifted[[i, i]] += jitter * scale;
        }
        log::warn!("cholesky failed; retrying with diagonal jitter {:e}", jitter * scale);
        if let Some(lower) = cholesky(&shifted.view()) {
            return Ok(Factor { lower, jitter: jitter * scale });
        }
        jitter *= 10.0;
    }
    let max = diag.iter().cloned().fold(f64::MIN, f64::max);
    let min = diag.iter().cloned().fold(f64::MAX, f64::min);
    Err(if min > 0.0 { max / min } else { f64::INFINITY })
}

/// Solve `L X = B` in place (`L` lower triangular).
pub fn solve_lower_in_place(l: &ArrayView2<f64>, mut x: ArrayViewMut2<f64>) {
    let n = l.nrows();
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        if start > 0 {
            let update = l.slice(s![start..end, ..start]).dot(&x.slice(s![..start, ..]));
            let mut blk = x.slice_mut(s![start..end, ..]);
            blk -= &update;
        }
        for i in start..end {
            for k in start..i {
                let lik = l[[i, k]];
                if lik != 0.0 {
                    let (done, mut rest) = x.view_mut().split_at(ndarray::Axis(0), i);
                    rest.row_mut(0).scaled_add(-lik, &done.row(k));
                }
            }
            let lii = l[[i, i]];
            x.row_mut(i).mapv_inplace(|v| v / lii);
        }
        start = end;
    }
}

/// Solve `Lᵀ X = B` in place (`L` lower triangular).
pub fn solve_upper_transposed_in_place(l: &ArrayView2<f64>, mut x: ArrayViewMut2<f64>) {
    let n = l.nrows();
    let mut end = n;
    while end > 0 {
        let start = end.saturating_sub(BLOCK);
        if end < n {
            // rows start..end depend on already-solved rows end..n through L[end.., start..end]ᵀ
            let update = l.slice(s![end.., start..end]).t().dot(&x.slice(s![end.., ..]));
            let mut blk = x.slice_mut(s![start..end, ..]);
            blk -= &update;
        }
        for i in (start..end).rev() {
            for k in i + 1..end {
                let lki = l[[k, i]];
                if lki != 0.0 {
                    let (mut head, tail) = x.view_mut().split_at(ndarray::Axis(0), i + 1);
                    head.row_mut(i).scaled_add(-lki, &tail.row(k - i - 1));
                }
            }
            let lii = l[[i, i]];
            x.row_mut(i).mapv_inplace(|v| v / lii);
        }
        end = start;
    }
}

/// `A⁻¹ B` given the Cholesky factor of `A`.
pub fn cholesky_solve(l: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let mut x = b.to_owned();
    solve_lower_in_place(l, x.view_mut());
    solve_upper_transposed_in_place(l, x.view_mut());
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_spd(n: usize, rng: &mut impl Rng) -> Array2<f64> {
        let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let mut a = m.dot(&m.t());
        for i in 0..n {
            a[[i, i]] += n as f64 * 0.1;
        }
        a
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in [1, 3, 17, 130] {
            let a = random_spd(n, &mut rng);
            let l = cholesky(&a.view()).unwrap();
            let err = (&l.dot(&l.t()) - &a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-10, "n={n} err={err}");
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(l[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn blocked_solve_matches_residual() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for n in [2, 64, 65, 200] {
            let a = random_spd(n, &mut rng);
            let b = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
            let l = cholesky(&a.view()).unwrap();
            let x = cholesky_solve(&l.view(), &b.view());
            let resid = (&a.dot(&x) - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(resid < 1e-9, "n={n} resid={resid}");
        }
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        // rank-one PSD matrix: plain Cholesky breaks down
        let v = ndarray::arr2(&[[1.0], [1.0], [1.0]]);
        let a = v.dot(&v.t());
        assert!(cholesky(&a.view()).is_none());
        let f = cholesky_with_jitter(&a.view()).unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= 1e-6);
    }

    #[test]
    fn indefinite_matrix_reports_failure() {
        let a = ndarray::arr2(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(cholesky_with_jitter(&a.view()).is_err());
    }
}
