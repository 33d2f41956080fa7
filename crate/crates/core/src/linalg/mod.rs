//! Dense kernels for the latent dynamics and losses: matrix exponential,
//! linear solve, eigenvalues and the 2-D FFT.

mod expm;
mod fft;
mod matrix;
mod solve;
mod spectrum;

pub use expm::{matrix_exp, matrix_exp_action, MAX_SERIES_TERMS, SERIES_TOL};
pub use fft::{fft2, fft_in_place, twiddle, ComplexField};
pub use matrix::SquareMatrix;
pub use solve::{solve_linear, PIVOT_TOL};
pub use spectrum::{eigenvalues, spectral_abscissa, ComplexSpectrum, MAX_SWEEPS};
