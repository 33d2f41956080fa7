use serde::{Deserialize, Serialize};

use crate::dynamics::Scheme;
use crate::error::{KaeError, Result};
use crate::loss::LossWeights;

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Rollout steps `N` per window.
    pub horizon: usize,
    /// Distance between consecutive window starts.
    pub stride: usize,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Cap on the global gradient norm; no clipping when absent.
    pub grad_clip: Option<f64>,
    /// Differentiable integrator for the training rollout.
    pub scheme: Scheme,
    pub seed: u64,
    /// Samples per data-parallel work unit. Gradients are reduced in chunk
    /// order, so results do not depend on the thread count.
    pub chunk_size: usize,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            horizon: 8,
            stride: 1,
            lr_peak: 5e-4,
            lr_final: 1e-5,
            warmup_epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            grad_clip: None,
            scheme: Scheme::Rk4,
            seed: 0,
            chunk_size: 16,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KaeError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.horizon == 0 {
            return bad("train.epochs, batch_size and horizon must be >= 1".into());
        }
        if self.stride == 0 || self.chunk_size == 0 {
            return bad("train.stride and chunk_size must be >= 1".into());
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!(
                "train.warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        for (name, v) in [
            ("lr_peak", self.lr_peak),
            ("lr_final", self.lr_final),
            ("eps", self.eps),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("train.{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("train.{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!(
                "train.weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("train.grad_clip must be > 0, got {c}"));
            }
        }
        if !self.scheme.is_differentiable() {
            return bad(format!(
                "train.scheme `{}` cannot be trained through; use euler or rk4",
                self.scheme
            ));
        }
        if self.loss.temporal == crate::loss::TemporalWeighting::Cosine && self.horizon < 2 {
            return bad("cosine temporal weights need horizon >= 2".into());
        }
        self.loss.validate()
    }
}
