use nalgebra::linalg::Schur;
use num_complex::Complex64;

use super::SquareMatrix;
use crate::error::{KaeError, Result};

pub const MAX_SWEEPS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn abscissa(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Eigenvalues from the real Schur form (Hessenberg reduction followed by
/// shifted QR sweeps).
pub fn eigenvalues(k: &SquareMatrix) -> Result<ComplexSpectrum> {
    if !k.is_finite() {
        return Err(KaeError::InvalidArgument(
            "eigenvalues of a non-finite matrix".into(),
        ));
    }
    let schur =
        Schur::try_new(k.to_nalgebra(), f64::EPSILON, MAX_SWEEPS).ok_or(KaeError::NoConvergence)?;
    Ok(ComplexSpectrum {
        eigenvalues: schur.complex_eigenvalues().iter().copied().collect(),
    })
}

/// Largest real part over the eigenvalues of `k`.
pub fn spectral_abscissa(k: &SquareMatrix) -> Result<f64> {
    Ok(eigenvalues(k)?.abscissa())
}
