//! Matrix exponential by scaling and squaring of the Taylor series.

use super::SquareMatrix;
use crate::error::{KaeError, Result};

/// Series terms stop once their 1-norm drops below this fraction of the
/// partial sum's 1-norm.
pub const SERIES_TOL: f64 = 1e-16;
pub const MAX_SERIES_TERMS: usize = 30;

/// `exp(M)`.
///
/// With `s = max(0, ⌈log₂ ‖M‖₁⌉)`, sums `Σ Aⁿ/n!` for `A = M / 2ˢ` until a
/// term is negligible (at most [`MAX_SERIES_TERMS`] terms), then squares
/// the result `s` times.
pub fn matrix_exp(m: &SquareMatrix) -> Result<SquareMatrix> {
    if !m.is_finite() {
        return Err(KaeError::InvalidArgument(
            "matrix_exp of a non-finite matrix".into(),
        ));
    }
    let n = m.dim();
    let norm = m.norm1();
    let s = if norm > 1.0 {
        norm.log2().ceil() as i32
    } else {
        0
    };
    let a = m.scaled(0.5f64.powi(s));

    let mut sum = SquareMatrix::identity(n);
    let mut term = SquareMatrix::identity(n);
    for k in 1..=MAX_SERIES_TERMS {
        term = term.matmul(&a).scaled(1.0 / k as f64);
        sum = sum.add(&term);
        if term.norm1() < SERIES_TOL * sum.norm1() {
            break;
        }
    }
    for _ in 0..s {
        sum = sum.matmul(&sum);
    }
    if !sum.is_finite() {
        return Err(KaeError::NonFinite {
            op: "matrix_exp",
            node: 0,
        });
    }
    Ok(sum)
}

/// `exp(Kτ) z`.
pub fn matrix_exp_action(k: &SquareMatrix, tau: f64, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != k.dim() {
        return Err(KaeError::shape(
            "matrix_exp_action",
            format!("generator {0}x{0}, vector {1}", k.dim(), z.len()),
        ));
    }
    matrix_exp(&k.scaled(tau))?.matvec(z)
}
