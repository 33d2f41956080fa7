use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::batch::build_loss_graph;
use super::config::TrainConfig;
use super::train::init_model;
use crate::autodiff::central_differences;
use crate::data::{generate_linear_oracle, window_at, LinearOracleConfig};
use crate::error::{KaeError, Result};
use crate::loss::LossWeights;
use crate::model::{Activation, ModelConfig, Parameters};

/// Settings of the end-to-end finite-difference check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Largest accepted relative error per parameter tensor.
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    /// Standard deviation of the noise added to the initial weights so that
    /// no gradient vanishes by construction.
    pub jitter: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tolerance: 1e-4,
            step: 1e-5,
            jitter: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub param: String,
    pub numel: usize,
    /// `‖analytic‖₂`.
    pub norm: f64,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`.
    pub relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub rows: Vec<GradCheckRow>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    /// The worst failing tensor as an error.
    pub fn ensure(&self) -> Result<()> {
        let worst = self
            .rows
            .iter()
            .filter(|r| !r.passed)
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error));
        match worst {
            None => Ok(()),
            Some(r) => Err(KaeError::GradCheck {
                param: r.param.clone(),
                error: r.relative_error,
                tolerance: self.tolerance,
            }),
        }
    }
}

/// Norm-wise relative gap between two gradient vectors; 0 when both vanish.
pub fn gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// The tiny configuration: 1×2×3 fields (`N_d = 6`), `Nz = 3`, horizon 2,
/// two windows, every loss component switched on.
pub fn tiny_configs(seed: u64) -> (LinearOracleConfig, ModelConfig, TrainConfig) {
    let data = LinearOracleConfig {
        seed,
        latent_dim: 2,
        channels: 1,
        height: 2,
        width: 3,
        steps: 6,
        trajectories: 2,
        ..LinearOracleConfig::default()
    };
    let model = ModelConfig {
        latent_dim: 3,
        hidden: vec![4],
        activation: Activation::Silu,
        lora_rank: 2,
        hyper_hidden: 3,
        embed_count: 3,
        init_skew_std: 0.3,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        horizon: 2,
        seed,
        loss: LossWeights {
            stability: 0.1,
            ..LossWeights::default()
        },
        ..TrainConfig::default()
    };
    (data, model, train)
}

/// Compares the analytic gradient of the total loss with central
/// differences for every parameter tensor of the tiny configuration.
pub fn gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(cfg.tolerance > 0.0) || !(cfg.step > 0.0) || !(cfg.jitter >= 0.0) {
        return Err(KaeError::Config(
            "gradcheck tolerance and step must be > 0, jitter >= 0".into(),
        ));
    }
    let (data_cfg, model_cfg, train) = tiny_configs(cfg.seed);
    let ds = generate_linear_oracle(&data_cfg)?;
    let mut model = init_model(&model_cfg, &ds, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.jitter).map_err(|e| KaeError::Config(e.to_string()))?;
    model.visit_mut(&mut |_, t| {
        for v in t.data_mut() {
            *v += noise.sample(&mut rng);
        }
    });

    let windows = vec![
        window_at(&ds, 0, 0, train.horizon),
        window_at(&ds, 1, 1, train.horizon),
    ];
    let embeddings: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| model.operator.embed.embed(w.phi))
        .collect();
    let mut lg = build_loss_graph(
        &model,
        &windows,
        &embeddings,
        ds.meta.dt,
        train.scheme,
        &train.loss,
    )?;
    let analytic = lg.graph.gradient(lg.total)?;
    let mut rows = Vec::new();
    for name in lg.graph.trainable_names() {
        let leaf = lg.graph.leaf(&name).expect("trainable leaf");
        let numeric = central_differences(&mut lg.graph, lg.total, leaf, cfg.step)?;
        let a = analytic
            .get(&name)
            .expect("gradient for every trainable leaf");
        let err = gradient_error(a.data(), &numeric);
        rows.push(GradCheckRow {
            numel: a.numel(),
            norm: a.norm_l2(),
            relative_error: err,
            passed: err <= cfg.tolerance,
            param: name,
        });
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        rows,
    })
}
