use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::EvalMetrics;
use crate::autodiff::Graph;
use crate::data::{sliding_windows, TrajectoryDataset, CONTEXT};
use crate::dynamics::{rollout_exp_matrix, rollout_matrix, LatentState, Scheme};
use crate::error::{KaeError, Result};
use crate::linalg::SquareMatrix;
use crate::model::{KoopmanAutoencoder, Parameters};
use crate::tensor::Tensor;

/// Rows pushed through the networks per graph during evaluation.
const EVAL_CHUNK: usize = 512;

fn rows_tensor(rows: &[&[f64]]) -> Result<Tensor> {
    let width = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::new(vec![rows.len(), width], data)
}

/// AR-2 encodings `z₀` of `(x_{t−1}, x_t)` pairs.
pub fn encode_batch(
    model: &KoopmanAutoencoder,
    prev: &[&[f64]],
    now: &[&[f64]],
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(now.len());
    for (p, n) in prev.chunks(EVAL_CHUNK).zip(now.chunks(EVAL_CHUNK)) {
        let mut g = Graph::new();
        let m = model.bound(&model.bind(&mut g, false)?)?;
        let xp = g.constant(rows_tensor(p)?);
        let xn = g.constant(rows_tensor(n)?);
        let z = m.encoders.encode(&mut g, xn, xp)?;
        out.extend(
            g.value(z)
                .data()
                .chunks(model.latent_dim())
                .map(<[f64]>::to_vec),
        );
    }
    Ok(out)
}

/// Decoded states for a list of latents.
pub fn decode_batch(model: &KoopmanAutoencoder, latents: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let nd = model.state.numel();
    let mut out = Vec::with_capacity(latents.len());
    for chunk in latents.chunks(EVAL_CHUNK) {
        let mut g = Graph::new();
        let m = model.bound(&model.bind(&mut g, false)?)?;
        let z = g.constant(rows_tensor(chunk)?);
        let x = m.decoder.forward(&mut g, z)?;
        out.extend(g.value(x).data().chunks(nd).map(<[f64]>::to_vec));
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `‖a − b‖ / ‖b‖`, or the absolute distance when `b = 0`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let d = sq_dist(a, b).sqrt();
    let n = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

/// Generators `K(φ)` for every trajectory, keyed by trajectory index.
fn generators(
    model: &KoopmanAutoencoder,
    ds: &TrajectoryDataset,
) -> Result<BTreeMap<usize, SquareMatrix>> {
    ds.trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| Ok((i, model.operator.koopman_matrix(t.phi)?)))
        .collect()
}

/// Rolls every test window `horizon` steps from its encoded context with
/// `scheme`, decodes, and scores each step against the truth and against
/// persistence. RK4 and the direct exponential are always both run so the
/// report carries their discrepancy and timing.
pub fn evaluate(
    ds: &TrajectoryDataset,
    model: &KoopmanAutoencoder,
    horizon: usize,
    scheme: Scheme,
) -> Result<EvalMetrics> {
    if ds.shape() != model.state {
        return Err(KaeError::Config(format!(
            "dataset fields are {:?}, model expects {:?}",
            ds.shape(),
            model.state
        )));
    }
    let windows = sliding_windows(ds, CONTEXT, horizon, 1)?;
    if windows.is_empty() {
        return Err(KaeError::Config(format!(
            "no test trajectory has the {} frames a horizon of {horizon} needs",
            horizon + CONTEXT
        )));
    }
    let dt = ds.meta.dt;
    let ks = generators(model, ds)?;
    let prev: Vec<&[f64]> = windows.iter().map(|w| w.context[0]).collect();
    let now: Vec<&[f64]> = windows.iter().map(|w| w.context[1]).collect();
    let z0s = encode_batch(model, &prev, &now)?;
    let times: Vec<f64> = (1..=horizon).map(|j| j as f64 * dt).collect();

    let mut rk4 = Vec::with_capacity(windows.len());
    let clock = Instant::now();
    for (w, z0) in windows.iter().zip(&z0s) {
        let z0 = LatentState::new(z0.clone(), 0.0);
        rk4.push(rollout_matrix(
            &ks[&w.trajectory],
            &z0,
            horizon,
            dt,
            Scheme::Rk4,
        )?);
    }
    let rk4_seconds = clock.elapsed().as_secs_f64();
    let mut exp = Vec::with_capacity(windows.len());
    let clock = Instant::now();
    for (w, z0) in windows.iter().zip(&z0s) {
        let z0 = LatentState::new(z0.clone(), 0.0);
        exp.push(rollout_exp_matrix(&ks[&w.trajectory], &z0, &times)?);
    }
    let exp_seconds = clock.elapsed().as_secs_f64();

    let mut discrepancy: f64 = 0.0;
    for (a, b) in rk4.iter().zip(&exp) {
        for (sa, sb) in a.states().iter().zip(b.states()) {
            discrepancy = discrepancy.max(relative_l2(&sa.z, &sb.z));
        }
    }

    let chosen = match scheme {
        Scheme::Rk4 => rk4,
        Scheme::Exp => exp,
        other => windows
            .iter()
            .zip(&z0s)
            .map(|(w, z0)| {
                rollout_matrix(
                    &ks[&w.trajectory],
                    &LatentState::new(z0.clone(), 0.0),
                    horizon,
                    dt,
                    other,
                )
            })
            .collect::<Result<_>>()?,
    };
    let latents: Vec<&[f64]> = chosen
        .iter()
        .flat_map(|t| t.states().iter().map(|s| s.z.as_slice()))
        .collect();
    let decoded = decode_batch(model, &latents)?;

    let nd = model.state.numel() as f64;
    let count = windows.len() as f64;
    let mut step_mse = vec![0.0; horizon];
    let mut persistence_mse = vec![0.0; horizon];
    for (wi, w) in windows.iter().enumerate() {
        for j in 0..horizon {
            let xhat = &decoded[wi * horizon + j];
            step_mse[j] += sq_dist(xhat, w.targets[j]) / nd / count;
            persistence_mse[j] += sq_dist(w.context[1], w.targets[j]) / nd / count;
        }
    }
    Ok(EvalMetrics {
        scheme,
        dt,
        windows: windows.len(),
        step_mse,
        persistence_mse,
        exp_rk4_discrepancy: discrepancy,
        exp_seconds,
        rk4_seconds,
    })
}

/// Decoded-state agreement between two step sizes at one physical time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub trajectory: usize,
    pub time: f64,
    pub dt_a: f64,
    pub dt_b: f64,
    pub relative_l2: f64,
}

/// RK4-versus-exponential latent gap at one rollout step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeGapRow {
    pub trajectory: usize,
    pub step: usize,
    pub time: f64,
    pub latent_relative_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntegratorReport {
    pub scheme_gap: Vec<SchemeGapRow>,
    pub alignment: Vec<AlignmentRow>,
    /// Decoded per-entry MSE of the RK4 and exponential rollouts against
    /// the data over the compared steps.
    pub rk4_mse: f64,
    pub exp_mse: f64,
}

impl IntegratorReport {
    pub fn max_scheme_gap(&self) -> f64 {
        self.scheme_gap
            .iter()
            .map(|r| r.latent_relative_l2)
            .fold(0.0, f64::max)
    }

    pub fn max_misalignment(&self) -> f64 {
        self.alignment
            .iter()
            .map(|r| r.relative_l2)
            .fold(0.0, f64::max)
    }
}

/// Settings for [`check_integrators`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorCheck {
    /// RK4 steps compared against the exponential.
    pub steps: usize,
    /// Step size of that comparison; the dataset Δt when absent.
    pub dt: Option<f64>,
    /// Step sizes whose decoded rollouts are aligned.
    pub dts: Vec<f64>,
    /// Alignment horizon in seconds.
    pub t_end: f64,
}

impl Default for IntegratorCheck {
    fn default() -> Self {
        Self {
            steps: 60,
            dt: None,
            dts: vec![0.05, 0.1, 0.2],
            t_end: 2.0,
        }
    }
}

/// Number of whole steps of size `dt` in `t`, if it is one.
fn whole_steps(t: f64, dt: f64) -> Option<usize> {
    let n = (t / dt).round();
    (n >= 1.0 && (n * dt - t).abs() <= 1e-9 * t.abs().max(1.0)).then_some(n as usize)
}

/// Structural integrator checks from the first two frames of every
/// trajectory: the RK4-versus-exponential latent gap over `steps` steps,
/// and the pairwise agreement of RK4 rollouts at different step sizes on
/// the grid of the coarsest one.
pub fn check_integrators(
    ds: &TrajectoryDataset,
    model: &KoopmanAutoencoder,
    check: &IntegratorCheck,
) -> Result<IntegratorReport> {
    let dt = check.dt.unwrap_or(ds.meta.dt);
    if check.steps == 0 || !(dt > 0.0) {
        return Err(KaeError::Config(
            "integrator check needs steps >= 1 and dt > 0".into(),
        ));
    }
    if check.dts.is_empty() || check.dts.iter().any(|&d| !(d > 0.0)) {
        return Err(KaeError::Config(
            "alignment step sizes must be positive".into(),
        ));
    }
    let coarse = check.dts.iter().copied().fold(0.0, f64::max);
    let grid = whole_steps(check.t_end, coarse).ok_or_else(|| {
        KaeError::Config(format!(
            "t_end {} is not a multiple of Δt {coarse}",
            check.t_end
        ))
    })?;
    for &d in &check.dts {
        if whole_steps(coarse, d).is_none() {
            return Err(KaeError::Config(format!(
                "alignment step {d} does not divide the coarsest step {coarse}"
            )));
        }
    }

    let usable: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.trajectories[i].len() >= CONTEXT)
        .collect();
    if usable.is_empty() {
        return Err(KaeError::Config(
            "no trajectory has two frames of context".into(),
        ));
    }
    let prev: Vec<&[f64]> = usable
        .iter()
        .map(|&i| ds.trajectories[i].frame(0))
        .collect();
    let now: Vec<&[f64]> = usable
        .iter()
        .map(|&i| ds.trajectories[i].frame(1))
        .collect();
    let z0s = encode_batch(model, &prev, &now)?;
    let times: Vec<f64> = (1..=check.steps).map(|j| j as f64 * dt).collect();

    let mut report = IntegratorReport::default();
    let (mut rk4_err, mut exp_err, mut scored) = (0.0, 0.0, 0usize);
    for (&i, z0) in usable.iter().zip(&z0s) {
        let traj = &ds.trajectories[i];
        let k = model.operator.koopman_matrix(traj.phi)?;
        let z0 = LatentState::new(z0.clone(), 0.0);
        let a = rollout_matrix(&k, &z0, check.steps, dt, Scheme::Rk4)?;
        let b = rollout_exp_matrix(&k, &z0, &times)?;
        for (j, (sa, sb)) in a.states().iter().zip(b.states()).enumerate() {
            report.scheme_gap.push(SchemeGapRow {
                trajectory: i,
                step: j + 1,
                time: times[j],
                latent_relative_l2: relative_l2(&sa.z, &sb.z),
            });
        }
        // Frames t+1, t+2, … of the data line up with steps 1, 2, … only
        // when the check runs at the dataset Δt.
        if dt == ds.meta.dt {
            let n = check.steps.min(traj.len() - CONTEXT);
            if n > 0 {
                let za: Vec<&[f64]> = a.states()[..n].iter().map(|s| s.z.as_slice()).collect();
                let zb: Vec<&[f64]> = b.states()[..n].iter().map(|s| s.z.as_slice()).collect();
                let xa = decode_batch(model, &za)?;
                let xb = decode_batch(model, &zb)?;
                for j in 0..n {
                    let truth = traj.frame(CONTEXT + j);
                    rk4_err += sq_dist(&xa[j], truth);
                    exp_err += sq_dist(&xb[j], truth);
                }
                scored += n * traj.frame_len();
            }
        }

        let mut decoded = Vec::with_capacity(check.dts.len());
        for &d in &check.dts {
            let per = whole_steps(coarse, d).expect("checked above");
            let run = rollout_matrix(&k, &z0, grid * per, d, Scheme::Rk4)?;
            let at: Vec<&[f64]> = (1..=grid)
                .map(|c| run.states()[c * per - 1].z.as_slice())
                .collect();
            decoded.push(decode_batch(model, &at)?);
        }
        for a in 0..check.dts.len() {
            for b in a + 1..check.dts.len() {
                for c in 0..grid {
                    report.alignment.push(AlignmentRow {
                        trajectory: i,
                        time: (c + 1) as f64 * coarse,
                        dt_a: check.dts[a],
                        dt_b: check.dts[b],
                        relative_l2: relative_l2(&decoded[a][c], &decoded[b][c]),
                    });
                }
            }
        }
    }
    if scored > 0 {
        report.rk4_mse = rk4_err / scored as f64;
        report.exp_mse = exp_err / scored as f64;
    }
    Ok(report)
}
