//! Tridiagonal elimination (Thomas algorithm).

use crate::error::{Result, SlvError};

/// Pivots smaller than this in magnitude abort the elimination.
pub const PIVOT_TOL: f64 = 1e-14;

/// Solves `A x = rhs` in place for tridiagonal `A`.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` unused), `upper[i]`
/// multiplies `x[i+1]` (`upper[n-1]` unused). `scratch` must hold `n` values.
pub fn solve_in_place(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    let n = rhs.len();
    debug_assert!(lower.len() >= n && diag.len() >= n && upper.len() >= n && scratch.len() >= n);
    if n == 0 {
        return Ok(());
    }
    let mut pivot = diag[0];
    if pivot.abs() < PIVOT_TOL {
        return Err(SlvError::SingularTridiagonal { row: 0, pivot });
    }
    scratch[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * scratch[i - 1];
        if pivot.abs() < PIVOT_TOL {
            return Err(SlvError::SingularTridiagonal { row: i, pivot });
        }
        scratch[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Ok(())
}

/// Allocating convenience wrapper around [`solve_in_place`].
pub fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let mut x = rhs.to_vec();
    let mut scratch = vec![0.0; rhs.len()];
    solve_in_place(lower, diag, upper, &mut x, &mut scratch)?;
    Ok(x)
}

/// `y = A x` for the same band layout.
pub fn multiply(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let mut y = diag[i] * x[i];
            if i > 0 {
                y += lower[i] * x[i - 1];
            }
            if i + 1 < n {
                y += upper[i] * x[i + 1];
            }
            y
        })
        .collect()
}
