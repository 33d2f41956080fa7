use super::SquareMatrix;
use crate::error::{KaeError, Result};

/// Pivots at or below this magnitude are treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Solves `A x = b` by LU factorization with partial pivoting.
pub fn solve_linear(a: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.dim();
    if b.len() != n {
        return Err(KaeError::shape(
            "solve_linear",
            format!("{n}x{n} system with right-hand side of length {}", b.len()),
        ));
    }
    let mut lu = a.entries().to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, lu[r * n + col]))
            .max_by(|(_, p), (_, q)| p.abs().total_cmp(&q.abs()))
            .expect("non-empty range");
        if !(pivot.abs() > PIVOT_TOL) {
            return Err(KaeError::Singular { pivot, column: col });
        }
        if pivot_row != col {
            for j in 0..n {
                lu.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let factor = lu[r * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                lu[r * n + j] -= factor * lu[col * n + j];
            }
            x[r] -= factor * x[col];
        }
    }
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|j| lu[r * n + j] * x[j]).sum();
        x[r] = (x[r] - tail) / lu[r * n + r];
    }
    Ok(x)
}
