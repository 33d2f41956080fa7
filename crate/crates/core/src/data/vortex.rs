use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::dataset::{DatasetMeta, Trajectory, TrajectoryDataset};
use crate::error::{KaeError, Result};
use crate::tensor::FieldShape;

pub const VORTEX_STREET_ID: &str = "vortex_street";

/// Velocity components are clamped to `[−VELOCITY_BOUND, VELOCITY_BOUND]`.
pub const VELOCITY_BOUND: f64 = 3.0;

/// Two staggered rows of counter-rotating Lamb–Oseen vortices advected
/// along a channel that is periodic in x.
///
/// The domain is `[0, W/H) × [0, 1)` with grid spacing `1/H`. The shedding
/// frequency is `frequency_base + frequency_slope·φ` and the circulation
/// decays at rate `decay_base + decay_slope·φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VortexStreetConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub dt: f64,
    pub trajectories: usize,
    pub first_trajectory: usize,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Vortex pairs across the periodic length.
    pub pairs: usize,
    pub circulation: f64,
    pub core_radius: f64,
    /// Distance between the two rows.
    pub row_spacing: f64,
    /// Uniform stream added to `vx`.
    pub free_stream: f64,
    pub frequency_base: f64,
    pub frequency_slope: f64,
    pub decay_base: f64,
    pub decay_slope: f64,
    pub subsample: bool,
}

impl Default for VortexStreetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 16,
            width: 32,
            steps: 64,
            dt: 0.1,
            trajectories: 8,
            first_trajectory: 0,
            phi_min: 0.0,
            phi_max: 1.0,
            pairs: 2,
            circulation: 0.4,
            core_radius: 0.1,
            row_spacing: 0.3,
            free_stream: 1.0,
            frequency_base: 0.5,
            frequency_slope: 1.0,
            decay_base: 0.02,
            decay_slope: 0.08,
            subsample: false,
        }
    }
}

impl VortexStreetConfig {
    pub fn shape(&self) -> FieldShape {
        FieldShape::new(2, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KaeError::Config(m));
        if self.height < 8 || self.width < 8 {
            return bad(format!(
                "vortex grid must be at least 8x8, got {}x{}",
                self.height, self.width
            ));
        }
        if self.steps < 1 || self.trajectories < 1 || self.pairs < 1 {
            return bad("vortex street needs steps, trajectories and pairs >= 1".into());
        }
        if !(self.dt > 0.0) || !(self.core_radius > 0.0) {
            return bad("vortex dt and core_radius must be > 0".into());
        }
        if !(self.phi_max >= self.phi_min) {
            return bad(format!(
                "phi range [{}, {}] is empty",
                self.phi_min, self.phi_max
            ));
        }
        Ok(())
    }

    pub fn frequency(&self, phi: f64) -> f64 {
        self.frequency_base + self.frequency_slope * phi
    }

    pub fn decay(&self, phi: f64) -> f64 {
        self.decay_base + self.decay_slope * phi
    }

    fn length(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    /// `(vx, vy)` at every grid point at time `t` for vortices whose first
    /// upper-row core starts at `x0`.
    pub fn field(&self, phi: f64, x0: f64, t: f64) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let len = self.length();
        let lambda = len / self.pairs as f64;
        let shift = x0 + lambda * self.frequency(phi) * t;
        let gamma = self.circulation * (-self.decay(phi) * t).exp();
        let mut cores = Vec::with_capacity(2 * self.pairs);
        for k in 0..self.pairs {
            let upper = (k as f64 * lambda + shift).rem_euclid(len);
            let lower = ((k as f64 + 0.5) * lambda + shift).rem_euclid(len);
            cores.push((upper, 0.5 + 0.5 * self.row_spacing, gamma));
            cores.push((lower, 0.5 - 0.5 * self.row_spacing, -gamma));
        }
        let rc2 = self.core_radius * self.core_radius;
        let mut out = vec![0.0; 2 * h * w];
        for r in 0..h {
            let y = (r as f64 + 0.5) / h as f64;
            for c in 0..w {
                let x = (c as f64 + 0.5) / h as f64;
                let (mut vx, mut vy) = (self.free_stream, 0.0);
                for &(cx, cy, g) in &cores {
                    for image in -1..=1 {
                        let dx = x - (cx + image as f64 * len);
                        let dy = y - cy;
                        let r2 = dx * dx + dy * dy;
                        if r2 == 0.0 {
                            continue;
                        }
                        // Lamb–Oseen: v_θ = Γ/(2πr)·(1 − e^{−r²/r_c²}).
                        let k = g / (2.0 * PI * r2) * (1.0 - (-r2 / rc2).exp());
                        vx -= k * dy;
                        vy += k * dx;
                    }
                }
                out[r * w + c] = vx.clamp(-VELOCITY_BOUND, VELOCITY_BOUND);
                out[h * w + r * w + c] = vy.clamp(-VELOCITY_BOUND, VELOCITY_BOUND);
            }
        }
        out
    }

    fn initial_condition(&self, index: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + (self.first_trajectory + index) as u64);
        let phi = if self.phi_max > self.phi_min {
            rng.random_range(self.phi_min..=self.phi_max)
        } else {
            self.phi_min
        };
        let lambda = self.length() / self.pairs as f64;
        (phi, rng.random_range(0.0..lambda))
    }

    pub fn trajectory(&self, index: usize) -> Result<Trajectory> {
        let (phi, x0) = self.initial_condition(index);
        let (h, keep) = if self.subsample {
            (0.5 * self.dt, 2)
        } else {
            (self.dt, 1)
        };
        let mut frames = Vec::with_capacity(self.steps * self.shape().numel());
        for s in 0..self.steps {
            frames.extend(self.field(phi, x0, (s * keep) as f64 * h));
        }
        Trajectory::new(phi, frames, self.shape())
    }
}

pub fn generate_vortex_street(cfg: &VortexStreetConfig) -> Result<TrajectoryDataset> {
    cfg.validate()?;
    let trajectories = (0..cfg.trajectories)
        .map(|i| cfg.trajectory(i))
        .collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta {
        dt: cfg.dt,
        channels: vec!["vx".into(), "vy".into()],
        height: cfg.height,
        width: cfg.width,
        generator: VORTEX_STREET_ID.into(),
        seed: cfg.seed,
    };
    TrajectoryDataset::new(meta, trajectories)
}
