use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetMeta, Trajectory, TrajectoryDataset};
use crate::error::{KaeError, Result};
use crate::linalg::{eigenvalues, matrix_exp, SquareMatrix};
use crate::tensor::{FieldShape, Tensor};

pub const LINEAR_ORACLE_ID: &str = "linear_oracle";

/// Settings for data that is exactly linear in a hidden latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearOracleConfig {
    pub seed: u64,
    /// Dimension of the hidden latent.
    pub latent_dim: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Frames per trajectory.
    pub steps: usize,
    pub dt: f64,
    pub trajectories: usize,
    /// Index of the first trajectory. Two datasets from the same seed share
    /// the hidden system; disjoint index ranges give disjoint initial states.
    pub first_trajectory: usize,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Largest oscillation frequency (rad/s) of the unmodulated system.
    pub max_frequency: f64,
    pub dissipation_min: f64,
    pub dissipation_max: f64,
    /// Coupling added to one skew pair per unit φ.
    pub modulation: f64,
    /// Integrate at Δt/2 and keep every other frame.
    pub subsample: bool,
}

impl Default for LinearOracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latent_dim: 6,
            channels: 1,
            height: 8,
            width: 8,
            steps: 40,
            dt: 0.1,
            trajectories: 32,
            first_trajectory: 0,
            phi_min: 0.0,
            phi_max: 1.0,
            max_frequency: 1.0,
            dissipation_min: 0.02,
            dissipation_max: 0.1,
            modulation: 0.5,
            subsample: false,
        }
    }
}

impl LinearOracleConfig {
    pub fn shape(&self) -> FieldShape {
        FieldShape::new(self.channels, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let nd = self.shape().numel();
        let bad = |m: String| Err(KaeError::Config(m));
        if self.latent_dim < 2 || self.latent_dim > nd {
            return bad(format!(
                "oracle latent_dim must be in 2..={nd} (the state dimension), got {}",
                self.latent_dim
            ));
        }
        if self.steps < 1 || self.trajectories < 1 {
            return bad("oracle needs at least one trajectory of one frame".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("oracle dt must be > 0, got {}", self.dt));
        }
        if !(self.phi_max >= self.phi_min) {
            return bad(format!(
                "phi range [{}, {}] is empty",
                self.phi_min, self.phi_max
            ));
        }
        if !(self.dissipation_min >= 0.0 && self.dissipation_max >= self.dissipation_min) {
            return bad("oracle dissipation range must satisfy 0 <= min <= max".into());
        }
        if !(self.max_frequency >= 0.0) || !self.modulation.is_finite() {
            return bad("oracle frequency and modulation must be finite, frequency >= 0".into());
        }
        Ok(())
    }
}

/// The hidden system: `K_true(φ) = W − D + φ·m·(e₀e₁ᵀ − e₁e₀ᵀ)` with `W`
/// skew-symmetric and `D` a positive diagonal; observations `x = G z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOracle {
    cfg: LinearOracleConfig,
    skew: SquareMatrix,
    dissipation: Vec<f64>,
    /// `[N_d, Nz_true]`, row-major.
    lifting: Tensor,
}

impl LinearOracle {
    pub fn new(cfg: &LinearOracleConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.latent_dim;
        let nd = cfg.shape().numel();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);

        let s: Vec<f64> = (0..n * n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut skew = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                skew.set(i, j, s[i * n + j] - s[j * n + i]);
            }
        }
        let radius = eigenvalues(&skew)?
            .eigenvalues
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max);
        if radius > 0.0 {
            skew = skew.scaled(cfg.max_frequency / radius);
        }
        let dissipation = (0..n)
            .map(|_| {
                if cfg.dissipation_max > cfg.dissipation_min {
                    rng.random_range(cfg.dissipation_min..cfg.dissipation_max)
                } else {
                    cfg.dissipation_min
                }
            })
            .collect();
        let std = (1.0 / n as f64).sqrt();
        let lifting = Tensor::new(
            vec![nd, n],
            (0..nd * n)
                .map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect(),
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            skew,
            dissipation,
            lifting,
        })
    }

    pub fn config(&self) -> &LinearOracleConfig {
        &self.cfg
    }

    /// `K_true(φ)`.
    pub fn generator(&self, phi: f64) -> SquareMatrix {
        let mut k = self.skew.clone();
        for (i, d) in self.dissipation.iter().enumerate() {
            k.set(i, i, k.get(i, i) - d);
        }
        let c = self.cfg.modulation * phi;
        k.set(0, 1, k.get(0, 1) + c);
        k.set(1, 0, k.get(1, 0) - c);
        k
    }

    /// `G`, `[N_d, Nz_true]`.
    pub fn lifting(&self) -> &Tensor {
        &self.lifting
    }

    pub fn observe(&self, z: &[f64]) -> Vec<f64> {
        let n = self.cfg.latent_dim;
        self.lifting
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().zip(z).map(|(g, v)| g * v).sum())
            .collect()
    }

    /// `(φ, z₀)` of trajectory `index` (counted from zero, before
    /// `first_trajectory` is applied).
    pub fn initial_condition(&self, index: usize) -> (f64, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1 + (self.cfg.first_trajectory + index) as u64);
        let phi = if self.cfg.phi_max > self.cfg.phi_min {
            rng.random_range(self.cfg.phi_min..=self.cfg.phi_max)
        } else {
            self.cfg.phi_min
        };
        let z0 = (0..self.cfg.latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        (phi, z0)
    }

    pub fn trajectory(&self, index: usize) -> Result<Trajectory> {
        let (phi, mut z) = self.initial_condition(index);
        let (h, keep) = if self.cfg.subsample {
            (0.5 * self.cfg.dt, 2)
        } else {
            (self.cfg.dt, 1)
        };
        let p = matrix_exp(&self.generator(phi).scaled(h))?;
        let nd = self.cfg.shape().numel();
        let mut frames = Vec::with_capacity(self.cfg.steps * nd);
        for t in 0..self.cfg.steps {
            frames.extend(self.observe(&z));
            if t + 1 < self.cfg.steps {
                for _ in 0..keep {
                    z = p.matvec(&z)?;
                }
            }
        }
        Trajectory::new(phi, frames, self.cfg.shape())
    }

    pub fn generate(&self) -> Result<TrajectoryDataset> {
        let trajectories = (0..self.cfg.trajectories)
            .map(|i| self.trajectory(i))
            .collect::<Result<Vec<_>>>()?;
        let meta = DatasetMeta {
            dt: self.cfg.dt,
            channels: (0..self.cfg.channels).map(|c| format!("x{c}")).collect(),
            height: self.cfg.height,
            width: self.cfg.width,
            generator: LINEAR_ORACLE_ID.into(),
            seed: self.cfg.seed,
        };
        TrajectoryDataset::new(meta, trajectories)
    }
}

pub fn generate_linear_oracle(cfg: &LinearOracleConfig) -> Result<TrajectoryDataset> {
    LinearOracle::new(cfg)?.generate()
}
