use serde::{Deserialize, Serialize};

use crate::error::{KaeError, Result};
use crate::tensor::FieldShape;

/// One trajectory: `len` snapshots of a `C×H×W` field, stored flat in
/// `(T, C, H, W)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub phi: f64,
    pub frames: Vec<f64>,
    frame_len: usize,
}

impl Trajectory {
    pub fn new(phi: f64, frames: Vec<f64>, shape: FieldShape) -> Result<Self> {
        let n = shape.numel();
        if n == 0 || !frames.len().is_multiple_of(n) {
            return Err(KaeError::shape(
                "trajectory",
                format!("{} values do not split into frames of {n}", frames.len()),
            ));
        }
        Ok(Self {
            phi,
            frames,
            frame_len: n,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.frame_len
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.frame_len..(t + 1) * self.frame_len]
    }
}

/// Settings shared by every trajectory of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Seconds between consecutive snapshots.
    pub dt: f64,
    pub channels: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub generator: String,
    pub seed: u64,
}

impl DatasetMeta {
    pub fn shape(&self) -> FieldShape {
        FieldShape::new(self.channels.len(), self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(meta: DatasetMeta, trajectories: Vec<Trajectory>) -> Result<Self> {
        let ds = Self { meta, trajectories };
        ds.validate()?;
        Ok(ds)
    }

    pub fn shape(&self) -> FieldShape {
        self.meta.shape()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn phis(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.phi).collect()
    }

    /// Smallest and largest φ.
    pub fn phi_range(&self) -> Option<(f64, f64)> {
        let phis = self.phis();
        let lo = phis.iter().copied().reduce(f64::min)?;
        let hi = phis.iter().copied().reduce(f64::max)?;
        Some((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.meta.dt > 0.0) || !self.meta.dt.is_finite() {
            return Err(KaeError::Format(format!(
                "dataset Δt must be > 0, got {}",
                self.meta.dt
            )));
        }
        let n = self.shape().numel();
        if n == 0 {
            return Err(KaeError::Format("dataset has an empty field layout".into()));
        }
        for (i, t) in self.trajectories.iter().enumerate() {
            if t.frame_len != n {
                return Err(KaeError::Format(format!(
                    "trajectory {i} frames do not match the {:?} layout",
                    self.shape()
                )));
            }
            if !t.phi.is_finite() || t.frames.iter().any(|v| !v.is_finite()) {
                return Err(KaeError::Format(format!(
                    "trajectory {i} has non-finite values"
                )));
            }
        }
        Ok(())
    }
}
