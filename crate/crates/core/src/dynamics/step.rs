use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{KaeError, Result};
use crate::linalg::{matrix_exp_action, solve_linear, SquareMatrix};
use crate::tensor::Tensor;

/// Latent propagation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
    #[serde(alias = "midpoint")]
    ImplicitMidpoint,
    /// `exp(KΔt)` applied per step; inference only.
    Exp,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Euler,
        Scheme::Rk4,
        Scheme::ImplicitMidpoint,
        Scheme::Exp,
    ];

    /// Whether gradients reach the generator through this scheme.
    pub fn is_differentiable(self) -> bool {
        matches!(self, Scheme::Euler | Scheme::Rk4)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
            Scheme::ImplicitMidpoint => "implicit_midpoint",
            Scheme::Exp => "exp",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = KaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            "midpoint" | "implicit_midpoint" => Ok(Scheme::ImplicitMidpoint),
            "exp" => Ok(Scheme::Exp),
            other => Err(KaeError::Config(format!(
                "unknown scheme `{other}` (expected euler, rk4, midpoint or exp)"
            ))),
        }
    }
}

/// Right-hand side `f(Z)` of `dZ/dt` for a batch of row-vector latents
/// `Z: [B, Nz]`.
#[derive(Debug, Clone, Copy)]
pub enum LatentField {
    /// `f(Z) = Z·Kᵀ` with `kt = Kᵀ` shared by the batch.
    Dense { kt: NodeId },
    /// `f(Z) = Z·K₀ᵀ + ((Z·Aᵀ) ⊙ G)·Bᵀ` with per-sample gains `G: [B, r]`.
    Factored {
        k0t: NodeId,
        at: NodeId,
        bt: NodeId,
        gains: NodeId,
    },
}

impl LatentField {
    pub fn apply(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        match *self {
            LatentField::Dense { kt } => g.matmul(z, kt),
            LatentField::Factored { k0t, at, bt, gains } => {
                let base = g.matmul(z, k0t)?;
                let za = g.matmul(z, at)?;
                let zg = g.mul(za, gains)?;
                let corr = g.matmul(zg, bt)?;
                g.add(base, corr)
            }
        }
    }
}

/// `z + Δt·f(z)`.
pub fn euler_step_graph(g: &mut Graph, field: &LatentField, z: NodeId, dt: f64) -> Result<NodeId> {
    let k = field.apply(g, z)?;
    let dz = g.scale(k, dt)?;
    g.add(z, dz)
}

/// Classical fourth-order Runge–Kutta step.
pub fn rk4_step_graph(g: &mut Graph, field: &LatentField, z: NodeId, dt: f64) -> Result<NodeId> {
    let k1 = field.apply(g, z)?;
    let h1 = g.scale(k1, 0.5 * dt)?;
    let z2 = g.add(z, h1)?;
    let k2 = field.apply(g, z2)?;
    let h2 = g.scale(k2, 0.5 * dt)?;
    let z3 = g.add(z, h2)?;
    let k3 = field.apply(g, z3)?;
    let h3 = g.scale(k3, dt)?;
    let z4 = g.add(z, h3)?;
    let k4 = field.apply(g, z4)?;
    let k23 = g.add(k2, k3)?;
    let k23 = g.scale(k23, 2.0)?;
    let s = g.add(k1, k23)?;
    let s = g.add(s, k4)?;
    let inc = g.scale(s, dt / 6.0)?;
    g.add(z, inc)
}

/// One differentiable step. Only Euler and RK4 are available here.
pub fn step_graph(
    g: &mut Graph,
    field: &LatentField,
    z: NodeId,
    dt: f64,
    scheme: Scheme,
) -> Result<NodeId> {
    match scheme {
        Scheme::Euler => euler_step_graph(g, field, z, dt),
        Scheme::Rk4 => rk4_step_graph(g, field, z, dt),
        other => Err(KaeError::InvalidArgument(format!(
            "scheme `{other}` has no differentiable step; use euler or rk4"
        ))),
    }
}

fn check_dims(op: &'static str, k: &SquareMatrix, z: &[f64]) -> Result<()> {
    if k.dim() != z.len() {
        return Err(KaeError::shape(
            op,
            format!("generator {0}x{0}, latent of length {1}", k.dim(), z.len()),
        ));
    }
    Ok(())
}

fn graph_step_on_matrix(
    op: &'static str,
    k: &SquareMatrix,
    z: &[f64],
    dt: f64,
    scheme: Scheme,
) -> Result<Vec<f64>> {
    check_dims(op, k, z)?;
    let mut g = Graph::new();
    let kt = g.constant(k.transpose().to_tensor());
    let zn = g.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
    let out = step_graph(&mut g, &LatentField::Dense { kt }, zn, dt, scheme)?;
    Ok(g.value(out).data().to_vec())
}

/// `z + Δt·Kz`. Negative `Δt` steps backwards.
pub fn step_euler(k: &SquareMatrix, z: &[f64], dt: f64) -> Result<Vec<f64>> {
    graph_step_on_matrix("step_euler", k, z, dt, Scheme::Euler)
}

/// One RK4 step of `dz/dt = Kz`, built from the same graph primitives used
/// in training.
pub fn step_rk4(k: &SquareMatrix, z: &[f64], dt: f64) -> Result<Vec<f64>> {
    graph_step_on_matrix("step_rk4", k, z, dt, Scheme::Rk4)
}

/// Solves `(I − Δt/2·K) z' = (I + Δt/2·K) z`.
pub fn step_implicit_midpoint(k: &SquareMatrix, z: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dims("step_implicit_midpoint", k, z)?;
    let n = k.dim();
    let half = k.scaled(0.5 * dt);
    let lhs = SquareMatrix::identity(n).sub(&half);
    let rhs = SquareMatrix::identity(n).add(&half).matvec(z)?;
    solve_linear(&lhs, &rhs)
}

/// `exp(KΔt) z`.
pub fn step_exp(k: &SquareMatrix, z: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dims("step_exp", k, z)?;
    matrix_exp_action(k, dt, z)
}

/// One step of any scheme on an explicit generator.
pub fn step(k: &SquareMatrix, z: &[f64], dt: f64, scheme: Scheme) -> Result<Vec<f64>> {
    match scheme {
        Scheme::Euler => step_euler(k, z, dt),
        Scheme::Rk4 => step_rk4(k, z, dt),
        Scheme::ImplicitMidpoint => step_implicit_midpoint(k, z, dt),
        Scheme::Exp => step_exp(k, z, dt),
    }
}
