//! Dense Cholesky factorization and triangular solves on row-major buffers.

use crate::error::{Error, Result};

/// Lower-triangular `L` with `L Lᵀ = A` for a symmetric positive definite `n × n` matrix.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let row_j = j * n;
        let mut diag = a[row_j + j];
        for k in 0..j {
            diag -= l[row_j + k] * l[row_j + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { row: j, pivot: diag });
        }
        let d = diag.sqrt();
        l[row_j + j] = d;
        for i in j + 1..n {
            let row_i = i * n;
            let mut s = a[row_i + j];
            let (li, lj) = (&l[row_i..row_i + j], &l[row_j..row_j + j]);
            s -= li.iter().zip(lj).map(|(x, y)| x * y).sum::<f64>();
            l[row_i + j] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
        x[i] = (x[i] - s) / l[i * n + i];
    }
    x
}

/// Solves `Lᵀ x = b` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// `A⁻¹ b` given the Cholesky factor of `A`.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    solve_lower_transpose(l, n, &solve_lower(l, n, b))
}

/// `ln det A` from its Cholesky factor.
pub fn log_det(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| 2.0 * l[i * n + i].ln()).sum()
}
