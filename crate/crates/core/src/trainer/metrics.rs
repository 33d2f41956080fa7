use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::Scheme;
use crate::error::Result;
use crate::loss::LossReport;

/// Sample-weighted mean of every loss component over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    pub windows: usize,
    pub seconds: f64,
    pub loss: LossReport,
}

/// Rollout error of one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub scheme: Scheme,
    pub dt: f64,
    pub windows: usize,
    /// Mean over windows of the per-entry squared error at step `j + 1`.
    pub step_mse: Vec<f64>,
    /// The same for the persistence forecast `x̂_{t+j} = x_t`.
    pub persistence_mse: Vec<f64>,
    /// Largest relative L2 gap between the RK4 and matrix-exponential
    /// latents over all windows and steps.
    pub exp_rk4_discrepancy: f64,
    /// Wall time of the direct `exp(Kτ)z₀` rollouts.
    pub exp_seconds: f64,
    /// Wall time of the step-by-step RK4 rollouts.
    pub rk4_seconds: f64,
}

impl EvalMetrics {
    pub fn horizon(&self) -> usize {
        self.step_mse.len()
    }

    pub fn mean_mse(&self) -> f64 {
        self.step_mse.iter().sum::<f64>() / self.step_mse.len().max(1) as f64
    }

    pub fn mean_persistence_mse(&self) -> f64 {
        self.persistence_mse.iter().sum::<f64>() / self.persistence_mse.len().max(1) as f64
    }
}

/// Everything a run measures.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epochs: Vec<EpochMetrics>,
    pub evals: Vec<EvalMetrics>,
}

/// One row per epoch: `epoch, lr, batches, windows, seconds` then every
/// loss component.
pub fn write_epoch_csv(rows: &[EpochMetrics], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epoch", "lr", "batches", "windows", "seconds"];
    header.extend(LossReport::COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.epoch.to_string(),
            r.lr.to_string(),
            r.batches.to_string(),
            r.windows.to_string(),
            r.seconds.to_string(),
        ];
        rec.extend(r.loss.values().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per rollout step of every evaluation.
pub fn write_eval_csv(evals: &[EvalMetrics], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scheme",
        "step",
        "time",
        "mse",
        "persistence_mse",
        "windows",
        "exp_rk4_discrepancy",
        "exp_seconds",
        "rk4_seconds",
    ])?;
    for e in evals {
        for (j, (mse, base)) in e.step_mse.iter().zip(&e.persistence_mse).enumerate() {
            w.write_record([
                e.scheme.to_string(),
                (j + 1).to_string(),
                ((j + 1) as f64 * e.dt).to_string(),
                mse.to_string(),
                base.to_string(),
                e.windows.to_string(),
                e.exp_rk4_discrepancy.to_string(),
                e.exp_seconds.to_string(),
                e.rk4_seconds.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
