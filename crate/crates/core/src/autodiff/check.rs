//! Central-difference gradient oracle.

use super::graph::{Graph, NodeId};
use crate::error::{KaeError, Result};

/// Floor added to the central-difference magnitude in the relative error.
pub const FD_EPS: f64 = 1e-6;

/// Maximum over the entries of `leaf` of
/// `|analytic − central| / (|central| + FD_EPS)`.
///
/// The graph is replayed for every perturbation and restored afterwards.
pub fn finite_difference_check(g: &mut Graph, loss: NodeId, leaf: &str, h: f64) -> Result<f64> {
    finite_difference_check_with(g, loss, leaf, h, FD_EPS)
}

pub fn finite_difference_check_with(
    g: &mut Graph,
    loss: NodeId,
    leaf: &str,
    h: f64,
    eps: f64,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(KaeError::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let id = g
        .leaf(leaf)
        .ok_or_else(|| KaeError::Graph(format!("unknown input `{leaf}`")))?;
    g.replay()?;
    let analytic = g
        .gradient(loss)?
        .get(leaf)
        .ok_or_else(|| KaeError::Graph(format!("`{leaf}` does not require grad")))?
        .clone();
    let numeric = central_differences(g, loss, id, h)?;
    Ok(analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (n.abs() + eps))
        .fold(0.0, f64::max))
}

/// Central differences of the scalar `loss` with respect to every entry of
/// `leaf`, leaving the graph as it was.
pub fn central_differences(g: &mut Graph, loss: NodeId, leaf: NodeId, h: f64) -> Result<Vec<f64>> {
    let n = g.value(leaf).numel();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let orig = g.value(leaf).data()[k];
        g.leaf_data_mut(leaf)[k] = orig + h;
        g.replay()?;
        let plus = g.value(loss).data()[0];
        g.leaf_data_mut(leaf)[k] = orig - h;
        g.replay()?;
        let minus = g.value(loss).data()[0];
        g.leaf_data_mut(leaf)[k] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    g.replay()?;
    Ok(out)
}
