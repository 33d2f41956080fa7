use super::operator::KoopmanOperator;
use super::step::{step_graph, step_implicit_midpoint, LatentField, Scheme};
use crate::autodiff::{Graph, NodeId};
use crate::error::{KaeError, Result};
use crate::linalg::{matrix_exp, matrix_exp_action, SquareMatrix};
use crate::tensor::Tensor;

/// A latent vector at physical time `t` (seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub t: f64,
}

impl LatentState {
    pub fn new(z: Vec<f64>, t: f64) -> Self {
        Self { z, t }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.z.iter().all(|v| v.is_finite())
    }
}

/// Latent states at strictly increasing times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatentTrajectory {
    states: Vec<LatentState>,
}

impl LatentTrajectory {
    pub fn new(states: Vec<LatentState>) -> Result<Self> {
        if states.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(KaeError::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &[LatentState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> Option<&LatentState> {
        self.states.last()
    }
}

/// `n` states at `t₀ + jΔt` under `K(φ)`.
pub fn rollout(
    op: &KoopmanOperator,
    phi: f64,
    z0: &LatentState,
    n: usize,
    dt: f64,
    scheme: Scheme,
) -> Result<LatentTrajectory> {
    let k = op.koopman_matrix(phi)?;
    rollout_matrix(&k, z0, n, dt, scheme)
}

/// [`rollout`] on an explicit generator.
///
/// Euler and RK4 run on the same graph primitives as training; implicit
/// midpoint solves a linear system per step; `exp` applies `exp(KΔt)`
/// repeatedly.
pub fn rollout_matrix(
    k: &SquareMatrix,
    z0: &LatentState,
    n: usize,
    dt: f64,
    scheme: Scheme,
) -> Result<LatentTrajectory> {
    if n == 0 {
        return Err(KaeError::InvalidArgument(
            "rollout needs at least one step".into(),
        ));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(KaeError::InvalidArgument(format!(
            "rollout step must be > 0, got {dt}"
        )));
    }
    if k.dim() != z0.z.len() {
        return Err(KaeError::shape(
            "rollout",
            format!(
                "generator {0}x{0}, latent of length {1}",
                k.dim(),
                z0.z.len()
            ),
        ));
    }
    if !z0.is_finite() {
        return Err(KaeError::InvalidArgument(
            "initial latent is not finite".into(),
        ));
    }
    let diverged = |step: usize| KaeError::RolloutDiverged { step };
    let mut states = Vec::with_capacity(n);
    match scheme {
        Scheme::Euler | Scheme::Rk4 => {
            let mut g = Graph::new();
            let kt = g.constant(k.transpose().to_tensor());
            let field = LatentField::Dense { kt };
            let mut z = g.constant(Tensor::new(vec![1, z0.z.len()], z0.z.clone())?);
            for j in 1..=n {
                z = step_graph(&mut g, &field, z, dt, scheme).map_err(|e| match e {
                    KaeError::NonFinite { .. } => diverged(j),
                    other => other,
                })?;
                states.push(LatentState::new(
                    g.value(z).data().to_vec(),
                    z0.t + j as f64 * dt,
                ));
            }
        }
        Scheme::ImplicitMidpoint => {
            let mut z = z0.z.clone();
            for j in 1..=n {
                z = step_implicit_midpoint(k, &z, dt)?;
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(diverged(j));
                }
                states.push(LatentState::new(z.clone(), z0.t + j as f64 * dt));
            }
        }
        Scheme::Exp => {
            let p = matrix_exp(&k.scaled(dt))?;
            let mut z = z0.z.clone();
            for j in 1..=n {
                z = p.matvec(&z)?;
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(diverged(j));
                }
                states.push(LatentState::new(z.clone(), z0.t + j as f64 * dt));
            }
        }
    }
    LatentTrajectory::new(states)
}

/// `exp(Kτ) z₀` at each requested offset `τ`, each computed directly from
/// `z₀`.
pub fn rollout_exp(
    op: &KoopmanOperator,
    phi: f64,
    z0: &LatentState,
    times: &[f64],
) -> Result<LatentTrajectory> {
    let k = op.koopman_matrix(phi)?;
    rollout_exp_matrix(&k, z0, times)
}

/// [`rollout_exp`] on an explicit generator.
pub fn rollout_exp_matrix(
    k: &SquareMatrix,
    z0: &LatentState,
    times: &[f64],
) -> Result<LatentTrajectory> {
    if times.is_empty() {
        return Err(KaeError::InvalidArgument(
            "rollout_exp needs at least one time".into(),
        ));
    }
    if !(times[0] > 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(KaeError::InvalidArgument(format!(
            "rollout_exp times must be positive and strictly increasing: {times:?}"
        )));
    }
    let states = times
        .iter()
        .map(|&tau| {
            Ok(LatentState::new(
                matrix_exp_action(k, tau, &z0.z)?,
                z0.t + tau,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    LatentTrajectory::new(states)
}

/// Differentiable rollout of a batch `z0: [B, Nz]`; returns the `n`
/// successive states.
pub fn rollout_graph(
    g: &mut Graph,
    field: &LatentField,
    z0: NodeId,
    n: usize,
    dt: f64,
    scheme: Scheme,
) -> Result<Vec<NodeId>> {
    let mut out = Vec::with_capacity(n);
    let mut z = z0;
    for _ in 0..n {
        z = step_graph(g, field, z, dt, scheme)?;
        out.push(z);
    }
    Ok(out)
}
