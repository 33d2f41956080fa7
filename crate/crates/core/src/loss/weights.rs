use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{KaeError, Result};

/// How the prediction loss weights the steps of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TemporalWeighting {
    Uniform,
    /// `raw_j = ½(1 + cos(π(j−1)/(N−1)))`, normalized.
    #[default]
    Cosine,
}

/// Normalized cosine schedule over `n ≥ 2` steps: `w₁` largest, `w_n = 0`.
pub fn cosine_weights(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(KaeError::InvalidArgument(format!(
            "cosine weights need a horizon of at least 2, got {n}"
        )));
    }
    let raw: Vec<f64> = (0..n)
        .map(|j| 0.5 * (1.0 + (std::f64::consts::PI * j as f64 / (n - 1) as f64).cos()))
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / sum).collect())
}

pub fn temporal_weights(mode: TemporalWeighting, n: usize) -> Result<Vec<f64>> {
    match mode {
        TemporalWeighting::Uniform if n >= 1 => Ok(vec![1.0 / n as f64; n]),
        TemporalWeighting::Uniform => Err(KaeError::InvalidArgument(
            "uniform weights need a horizon of at least 1".into(),
        )),
        TemporalWeighting::Cosine => cosine_weights(n),
    }
}

/// Coefficients of the composite objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Rollout prediction.
    pub alpha: f64,
    /// Latent block.
    pub beta: f64,
    /// Physics block.
    pub lambda_phys: f64,
    /// Directional cosine, inside the latent block.
    pub w_cos: f64,
    pub w_sobolev_time: f64,
    pub w_sobolev_space: f64,
    pub w_spectral: f64,
    pub temporal: TemporalWeighting,
    /// Stop gradients through the encoder targets of the consistency term.
    pub detach_targets: bool,
    /// Weight of the symmetric-correction penalty that keeps `K(φ)` near
    /// the dissipative base.
    pub stability: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            lambda_phys: 0.1,
            w_cos: 0.1,
            w_sobolev_time: 1.0,
            w_sobolev_space: 1.0,
            w_spectral: 1.0,
            temporal: TemporalWeighting::Cosine,
            detach_targets: false,
            stability: 0.0,
        }
    }
}

impl LossWeights {
    /// Only the reconstruction term.
    pub fn recon_only() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            lambda_phys: 0.0,
            w_cos: 0.0,
            w_sobolev_time: 0.0,
            w_sobolev_space: 0.0,
            w_spectral: 0.0,
            stability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(KaeError::Config(format!(
                    "loss weight `{name}` must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_phys", self.lambda_phys),
            ("w_cos", self.w_cos),
            ("w_sobolev_time", self.w_sobolev_time),
            ("w_sobolev_space", self.w_sobolev_space),
            ("w_spectral", self.w_spectral),
            ("stability", self.stability),
        ]
    }

    /// Whether each block contributes at all.
    pub fn uses_latent(&self) -> bool {
        self.beta > 0.0
    }

    pub fn uses_physics(&self) -> bool {
        self.lambda_phys > 0.0
            && (self.w_sobolev_time > 0.0 || self.w_sobolev_space > 0.0 || self.w_spectral > 0.0)
    }
}

/// Graph nodes of every loss component on one batch. Absent components
/// count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub recon: Option<NodeId>,
    pub pred: Option<NodeId>,
    pub consistency: Option<NodeId>,
    pub linearity: Option<NodeId>,
    pub cosine: Option<NodeId>,
    pub energy: Option<NodeId>,
    pub sobolev_time: Option<NodeId>,
    pub sobolev_space: Option<NodeId>,
    pub spectral: Option<NodeId>,
    pub stability: Option<NodeId>,
}

impl LossTerms {
    /// `recon + α·pred + β·latent + λ_phys·phys + stability·penalty` with
    /// `latent = consistency + linearity + w_cos·cosine + energy` and
    /// `phys = w_time·time + w_space·space + w_spectral·spectral`.
    pub fn total(&self, g: &mut Graph, w: &LossWeights) -> Result<NodeId> {
        w.validate()?;
        let latent = [
            (self.consistency, 1.0),
            (self.linearity, 1.0),
            (self.cosine, w.w_cos),
            (self.energy, 1.0),
        ];
        let phys = [
            (self.sobolev_time, w.w_sobolev_time),
            (self.sobolev_space, w.w_sobolev_space),
            (self.spectral, w.w_spectral),
        ];
        let latent = weighted_sum(g, &latent)?;
        let phys = weighted_sum(g, &phys)?;
        let top = [
            (self.recon, 1.0),
            (self.pred, w.alpha),
            (latent, w.beta),
            (phys, w.lambda_phys),
            (self.stability, w.stability),
        ];
        match weighted_sum(g, &top)? {
            Some(t) => Ok(t),
            None => Ok(g.scalar(0.0)),
        }
    }

    /// Reads every component and the given total out of `g`.
    pub fn report(&self, g: &Graph, total: NodeId) -> LossReport {
        let v = |n: Option<NodeId>| n.map_or(0.0, |id| g.value(id).item().unwrap_or(f64::NAN));
        LossReport {
            total: v(Some(total)),
            recon: v(self.recon),
            pred: v(self.pred),
            consistency: v(self.consistency),
            linearity: v(self.linearity),
            cosine: v(self.cosine),
            energy: v(self.energy),
            sobolev_time: v(self.sobolev_time),
            sobolev_space: v(self.sobolev_space),
            spectral: v(self.spectral),
            stability: v(self.stability),
        }
    }
}

fn weighted_sum(g: &mut Graph, terms: &[(Option<NodeId>, f64)]) -> Result<Option<NodeId>> {
    let mut acc = None;
    for &(node, w) in terms {
        let Some(n) = node else { continue };
        if w == 0.0 {
            continue;
        }
        let t = if w == 1.0 { n } else { g.scale(n, w)? };
        acc = Some(match acc {
            None => t,
            Some(a) => g.add(a, t)?,
        });
    }
    Ok(acc)
}

/// Scalar values of every loss component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub recon: f64,
    pub pred: f64,
    pub consistency: f64,
    pub linearity: f64,
    pub cosine: f64,
    pub energy: f64,
    pub sobolev_time: f64,
    pub sobolev_space: f64,
    pub spectral: f64,
    pub stability: f64,
}

impl LossReport {
    pub const COLUMNS: [&'static str; 11] = [
        "total",
        "recon",
        "pred",
        "consistency",
        "linearity",
        "cosine",
        "energy",
        "sobolev_time",
        "sobolev_space",
        "spectral",
        "stability",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.total,
            self.recon,
            self.pred,
            self.consistency,
            self.linearity,
            self.cosine,
            self.energy,
            self.sobolev_time,
            self.sobolev_space,
            self.spectral,
            self.stability,
        ]
    }

    pub fn latent(&self, w: &LossWeights) -> f64 {
        self.consistency + self.linearity + w.w_cos * self.cosine + self.energy
    }

    pub fn physics(&self, w: &LossWeights) -> f64 {
        w.w_sobolev_time * self.sobolev_time
            + w.w_sobolev_space * self.sobolev_space
            + w.w_spectral * self.spectral
    }

    /// The total rebuilt from the components.
    pub fn recomputed_total(&self, w: &LossWeights) -> f64 {
        self.recon
            + w.alpha * self.pred
            + w.beta * self.latent(w)
            + w.lambda_phys * self.physics(w)
            + w.stability * self.stability
    }

    /// Batch-size-weighted combination of per-chunk reports.
    pub fn weighted_mean(parts: &[(LossReport, f64)]) -> LossReport {
        let mut out = [0.0; 11];
        for (r, w) in parts {
            for (o, v) in out.iter_mut().zip(r.values()) {
                *o += w * v;
            }
        }
        LossReport {
            total: out[0],
            recon: out[1],
            pred: out[2],
            consistency: out[3],
            linearity: out[4],
            cosine: out[5],
            energy: out[6],
            sobolev_time: out[7],
            sobolev_space: out[8],
            spectral: out[9],
            stability: out[10],
        }
    }
}
