use super::dataset::TrajectoryDataset;
use crate::error::{KaeError, Result};

/// Frames of context the encoders consume: `x_{t−1}` and `x_t`.
pub const CONTEXT: usize = 2;

/// A training or evaluation window inside one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch<'a> {
    pub trajectory: usize,
    /// Index of `x_{t−1}`.
    pub start: usize,
    pub phi: f64,
    /// `[x_{t−1}, x_t]`.
    pub context: [&'a [f64]; 2],
    /// `x_{t+1} … x_{t+N}`.
    pub targets: Vec<&'a [f64]>,
}

impl WindowBatch<'_> {
    pub fn horizon(&self) -> usize {
        self.targets.len()
    }
}

/// Number of windows of `context + horizon` frames at starts
/// `0, stride, 2·stride, …` in a trajectory of `len` frames.
pub fn window_count(len: usize, context: usize, horizon: usize, stride: usize) -> usize {
    let span = context + horizon;
    if stride == 0 || len < span {
        0
    } else {
        (len - span) / stride + 1
    }
}

/// Window positions `(trajectory, start)` in deterministic order.
pub fn window_starts(
    ds: &TrajectoryDataset,
    horizon: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if horizon == 0 {
        return Err(KaeError::Config("horizon must be >= 1".into()));
    }
    if stride == 0 {
        return Err(KaeError::Config("window stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    for (i, t) in ds.trajectories.iter().enumerate() {
        let n = window_count(t.len(), CONTEXT, horizon, stride);
        out.extend((0..n).map(|k| (i, k * stride)));
    }
    Ok(out)
}

/// Every window of `context + horizon` consecutive frames, trajectory by
/// trajectory. Too-short trajectories contribute nothing.
pub fn sliding_windows(
    ds: &TrajectoryDataset,
    context: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowBatch<'_>>> {
    if context != CONTEXT {
        return Err(KaeError::Config(format!(
            "context must be {CONTEXT} (one past frame plus the present), got {context}"
        )));
    }
    Ok(window_starts(ds, horizon, stride)?
        .into_iter()
        .map(|(i, s)| window_at(ds, i, s, horizon))
        .collect())
}

/// The window of `horizon` targets whose context starts at `start`.
pub fn window_at(
    ds: &TrajectoryDataset,
    trajectory: usize,
    start: usize,
    horizon: usize,
) -> WindowBatch<'_> {
    let t = &ds.trajectories[trajectory];
    WindowBatch {
        trajectory,
        start,
        phi: t.phi,
        context: [t.frame(start), t.frame(start + 1)],
        targets: (0..horizon).map(|j| t.frame(start + CONTEXT + j)).collect(),
    }
}
