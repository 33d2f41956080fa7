use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{KaeError, Result};

/// Gaussian radial-basis expansion of a scalar physical parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEmbedding {
    pub centers: Vec<f64>,
    pub bandwidth: f64,
    /// Standard deviation of the noise added to φ in training mode.
    #[serde(default)]
    pub noise: f64,
}

impl ParamEmbedding {
    pub fn new(centers: Vec<f64>, bandwidth: f64, noise: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(KaeError::Config(
                "embedding needs at least one center".into(),
            ));
        }
        if centers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(KaeError::Config(format!(
                "embedding centers must be strictly increasing: {centers:?}"
            )));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(KaeError::Config(format!(
                "embedding bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !(noise >= 0.0) {
            return Err(KaeError::Config(format!(
                "embedding noise must be >= 0, got {noise}"
            )));
        }
        Ok(Self {
            centers,
            bandwidth,
            noise,
        })
    }

    /// `count` evenly spaced centers over `[lo, hi]`, bandwidth equal to the
    /// spacing.
    pub fn spanning(lo: f64, hi: f64, count: usize, noise: f64) -> Result<Self> {
        if count == 0 || !(hi >= lo) {
            return Err(KaeError::Config(format!(
                "cannot span [{lo}, {hi}] with {count} centers"
            )));
        }
        if count == 1 || hi == lo {
            return Self::new(vec![0.5 * (lo + hi)], 1.0, noise);
        }
        let step = (hi - lo) / (count - 1) as f64;
        let centers = (0..count).map(|k| lo + step * k as f64).collect();
        Self::new(centers, step, noise)
    }

    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    /// `exp(−(φ − c_k)² / (2σ²))` for each center.
    pub fn embed(&self, phi: f64) -> Vec<f64> {
        let two_var = 2.0 * self.bandwidth * self.bandwidth;
        self.centers
            .iter()
            .map(|c| (-(phi - c) * (phi - c) / two_var).exp())
            .collect()
    }

    /// Training-mode embedding: φ is jittered by `N(0, noise²)` first.
    pub fn embed_noisy(&self, phi: f64, rng: &mut impl Rng) -> Vec<f64> {
        if self.noise == 0.0 {
            return self.embed(phi);
        }
        let jitter = Normal::new(0.0, self.noise)
            .expect("noise validated")
            .sample(rng);
        self.embed(phi + jitter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn center_hits_one() {
        let e = ParamEmbedding::new(vec![-1.0, 0.0, 2.0], 0.5, 0.0).unwrap();
        for (k, c) in e.centers.iter().enumerate() {
            assert_eq!(e.embed(*c)[k], 1.0);
        }
    }

    #[test]
    fn far_tail_vanishes() {
        let e = ParamEmbedding::new(vec![0.0, 1.0], 0.1, 0.0).unwrap();
        for v in e.embed(1.0 + 6.0 * 0.1 + 1e-9) {
            assert!(v < 1e-6);
        }
        for v in e.embed(-5.0) {
            assert!(v < 1e-6);
        }
    }

    #[test]
    fn affine_relabeling_is_invisible() {
        let e = ParamEmbedding::new(vec![0.2, 0.5, 0.9, 1.4], 0.3, 0.0).unwrap();
        let (a, b) = (3.7, -12.0);
        let relabeled = ParamEmbedding::new(
            e.centers.iter().map(|c| a * c + b).collect(),
            a * e.bandwidth,
            0.0,
        )
        .unwrap();
        for phi in [-0.3, 0.0, 0.45, 1.1, 2.0] {
            let x = e.embed(phi);
            let y = relabeled.embed(a * phi + b);
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(ParamEmbedding::new(vec![1.0, 1.0], 1.0, 0.0).is_err());
        assert!(ParamEmbedding::new(vec![0.0, 1.0], 0.0, 0.0).is_err());
        let s = ParamEmbedding::spanning(0.0, 1.0, 5, 0.0).unwrap();
        assert_eq!(s.centers, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s.bandwidth, 0.25);
    }

    #[test]
    fn noise_changes_training_embedding_only() {
        let e = ParamEmbedding::new(vec![0.0, 1.0], 0.5, 0.05).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_ne!(e.embed_noisy(0.3, &mut rng), e.embed(0.3));
        assert_eq!(e.embed(0.3), e.embed(0.3));
    }
}
