//! Trace-exponential acyclicity measure for weighted adjacency matrices.
//!
//! `h(W) = tr(exp(W ∘ W)) - n` is zero exactly when the support of `W` is a
//! DAG and grows smoothly with the weight on cycles.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NumericError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
}

/// Scaled norm below which the Taylor series is summed directly.
const SERIES_NORM: f64 = 0.5;
const MAX_TERMS: usize = 40;

/// Matrix exponential by scaling and squaring over a Taylor series summed to
/// machine precision.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericError> {
    if !a.is_square() {
        return Err(NumericError::NotSquare(a.nrows(), a.ncols()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(NumericError::NonFinite);
    }
    let n = a.nrows();
    // Infinity norm: max absolute row sum.
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > SERIES_NORM {
        (norm / SERIES_NORM).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=MAX_TERMS {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.amax() <= f64::EPSILON * result.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|x| !x.is_finite()) {
        return Err(NumericError::NonFinite);
    }
    Ok(result)
}

/// `h` and its gradient with respect to the squared weights `A = W ∘ W`,
/// which is `exp(A)ᵀ`.
pub fn acyclicity_of_squares(a: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), NumericError> {
    let e = expm(a)?;
    let h = e.trace() - a.nrows() as f64;
    Ok((h, e.transpose()))
}

/// `h(W) = tr(exp(W ∘ W)) - n` and `∇h = exp(W ∘ W)ᵀ ∘ 2W`.
pub fn acyclicity(w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), NumericError> {
    let a = w.component_mul(w);
    let (h, grad_a) = acyclicity_of_squares(&a)?;
    Ok((h, grad_a.component_mul(w) * 2.0))
}
