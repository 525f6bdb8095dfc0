//! Small dense helpers over row-major `f64` buffers.

use nalgebra::{DMatrix, DVector};

/// `X' diag(w) X` for a row-major N x P matrix, rows accumulated in order.
pub fn weighted_gram(x: &[f64], n: usize, p: usize, w: Option<&[f64]>) -> DMatrix<f64> {
    let mut g = vec![0.0; p * p];
    for i in 0..n {
        let row = &x[i * p..(i + 1) * p];
        let wi = w.map_or(1.0, |w| w[i]);
        if wi == 0.0 {
            continue;
        }
        for a in 0..p {
            let ra = row[a] * wi;
            if ra == 0.0 {
                continue;
            }
            for b in a..p {
                g[a * p + b] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[a * p + b] = g[b * p + a];
        }
    }
    DMatrix::from_row_slice(p, p, &g)
}

/// `X' v` for a row-major N x P matrix.
pub fn xt_vec(x: &[f64], n: usize, p: usize, v: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(p);
    for i in 0..n {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        for (a, &xa) in x[i * p..(i + 1) * p].iter().enumerate() {
            out[a] += xa * vi;
        }
    }
    out
}

/// Residual sum of squares of regressing column `target` on the remaining
/// columns, using only the Gram matrix `G = X'X`.
///
/// Performs symmetric Gaussian elimination of the non-target columns with
/// pivots below `tol * G_jj` treated as linearly dependent and skipped, so a
/// rank-deficient set of regressors still yields the projection onto their
/// span.
pub fn gram_residual(gram: &DMatrix<f64>, target: usize, tol: f64) -> f64 {
    let p = gram.nrows();
    let mut g = gram.clone();
    for k in (0..p).filter(|&k| k != target) {
        let pivot = g[(k, k)];
        if pivot <= tol * gram[(k, k)].max(f64::MIN_POSITIVE) {
            continue;
        }
        for a in 0..p {
            if a == k {
                continue;
            }
            let factor = g[(a, k)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for b in 0..p {
                if b != k {
                    g[(a, b)] -= factor * g[(k, b)];
                }
            }
        }
        for a in 0..p {
            if a != k {
                g[(a, k)] = 0.0;
                g[(k, a)] = 0.0;
            }
        }
    }
    g[(target, target)].max(0.0)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = m.clone().cholesky()?;
    let inv = chol.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_of_dependent_column_is_zero() {
        // columns: 1, x, 2x
        let x: Vec<f64> = (0..6).flat_map(|i| [1.0, i as f64, 2.0 * i as f64]).collect();
        let g = weighted_gram(&x, 6, 3, None);
        assert!(gram_residual(&g, 2, 1e-12) < 1e-9);
        assert!(gram_residual(&g, 1, 1e-12) < 1e-9);
    }

    #[test]
    fn residual_matches_projection() {
        // y = (1, 2, 4) regressed on intercept: residual = sum (y - 7/3)^2
        let x = [1.0, 1.0, 1.0, 2.0, 1.0, 4.0];
        let g = weighted_gram(&x, 3, 2, None);
        let mean = 7.0 / 3.0;
        let expect: f64 = [1.0f64, 2.0, 4.0].iter().map(|y| (y - mean).powi(2)).sum();
        assert!((gram_residual(&g, 1, 1e-12) - expect).abs() < 1e-12);
    }
}
