use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::dynamics::D_NAME;
use crate::error::{KaeError, Result};
use crate::model::Parameters;
use crate::tensor::Tensor;

/// Learning rate for `epoch`: linear from 0 to the peak over the warm-up
/// epochs, then a half cosine down to the final rate at the last epoch.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(KaeError::InvalidArgument(format!(
            "epoch {epoch} outside the schedule of {} epochs",
            cfg.epochs
        )));
    }
    let (peak, last) = (cfg.lr_peak, cfg.lr_final);
    if epoch < cfg.warmup_epochs {
        return Ok(peak * epoch as f64 / cfg.warmup_epochs as f64);
    }
    let span = cfg.epochs - 1 - cfg.warmup_epochs;
    if span == 0 {
        return Ok(peak);
    }
    let progress = (epoch - cfg.warmup_epochs) as f64 / span as f64;
    Ok(last + 0.5 * (peak - last) * (1.0 + (PI * progress).cos()))
}

/// Whether decoupled weight decay applies to a parameter: weights yes,
/// biases and the dissipation vector no.
pub fn decays(name: &str) -> bool {
    !name.ends_with(".bias") && name != D_NAME
}

/// AdamW moments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Global L2 norm of a gradient set.
pub fn gradient_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .flat_map(|t| t.data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// One AdamW update with bias correction at learning rate `lr`.
///
/// Every gradient is checked before any parameter moves, so a non-finite
/// entry leaves `params` and `state` untouched.
pub fn optimizer_step(
    params: &mut dyn Parameters,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    let mut missing = None;
    params.visit(&mut |name, t| {
        if missing.is_some() {
            return;
        }
        match grads.get(name) {
            Some(g) if g.shape() == t.shape() => {
                if !g.is_finite() {
                    missing = Some(KaeError::NonFiniteGradient {
                        param: name.to_string(),
                    });
                }
            }
            Some(g) => {
                missing = Some(KaeError::shape(
                    "optimizer_step",
                    format!(
                        "gradient of `{name}` is {:?}, parameter {:?}",
                        g.shape(),
                        t.shape()
                    ),
                ))
            }
            None => missing = Some(KaeError::Graph(format!("no gradient for `{name}`"))),
        }
    });
    if let Some(e) = missing {
        return Err(e);
    }
    let clip = match cfg.grad_clip {
        Some(c) => {
            let norm = gradient_norm(grads);
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    params.visit_mut(&mut |name, p| {
        let g = &grads[name];
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let decay = if decays(name) { lr * wd } else { 0.0 };
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((pv, &gv), (mv, vv)) in it {
            let gv = gv * clip;
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let update = (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
            *pv -= decay * *pv + lr * update;
        }
    });
    Ok(())
}
