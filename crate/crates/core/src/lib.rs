//! Continuous-time Koopman autoencoder engine.
//!
//! Learns linear latent dynamics `dz/dt = K(φ) z` from trajectory data and
//! integrates them with explicit Euler, RK4, implicit midpoint or the
//! matrix exponential.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{ErrorClass, KaeError, Result};
pub use tensor::Tensor;
