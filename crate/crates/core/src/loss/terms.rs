use crate::autodiff::{Graph, NodeId};
use crate::error::{KaeError, Result};
use crate::tensor::FieldShape;

/// Added to the product of norms in the cosine loss.
pub const COSINE_EPS: f64 = 1e-8;

fn same_shape(g: &Graph, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(KaeError::shape(
            op,
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

fn batch_rows(g: &Graph, op: &'static str, x: NodeId) -> Result<usize> {
    match g.shape(x) {
        [b, _] if *b > 0 => Ok(*b),
        s => Err(KaeError::shape(
            op,
            format!("expected [batch, features], got {s:?}"),
        )),
    }
}

fn check_fields(
    g: &Graph,
    op: &'static str,
    a: NodeId,
    b: NodeId,
    shape: FieldShape,
) -> Result<usize> {
    same_shape(g, op, a, b)?;
    let batch = batch_rows(g, op, a)?;
    if g.shape(a)[1] != shape.numel() {
        return Err(KaeError::shape(
            op,
            format!(
                "{} features, field layout {shape:?} has {}",
                g.shape(a)[1],
                shape.numel()
            ),
        ));
    }
    Ok(batch)
}

/// `Σ_q` over channels of the mean squared error over batch and space.
/// Fields are `[B, C·H·W]` rows.
pub fn loss_recon(g: &mut Graph, xhat: NodeId, x: NodeId, shape: FieldShape) -> Result<NodeId> {
    let batch = check_fields(g, "loss_recon", xhat, x, shape)?;
    let d = g.sub(xhat, x)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / (batch * shape.spatial()) as f64)
}

/// `Σ_j w_j · recon(x̂_j, x_j)`.
pub fn loss_pred(
    g: &mut Graph,
    preds: &[NodeId],
    targets: &[NodeId],
    weights: &[f64],
    shape: FieldShape,
) -> Result<NodeId> {
    if preds.len() != targets.len() || preds.len() != weights.len() || preds.is_empty() {
        return Err(KaeError::shape(
            "loss_pred",
            format!(
                "{} predictions, {} targets, {} weights",
                preds.len(),
                targets.len(),
                weights.len()
            ),
        ));
    }
    let mut total = None;
    for ((&p, &t), &w) in preds.iter().zip(targets).zip(weights) {
        let r = loss_recon(g, p, t, shape)?;
        let wr = g.scale(r, w)?;
        total = Some(match total {
            None => wr,
            Some(acc) => g.add(acc, wr)?,
        });
    }
    Ok(total.expect("non-empty"))
}

/// `Σ_j ‖ẑ_j − ẑ*_j‖²`, averaged over the batch. Latents are `[B, Nz]`.
pub fn loss_latent_consistency(
    g: &mut Graph,
    predicted: &[NodeId],
    encoded: &[NodeId],
) -> Result<NodeId> {
    if predicted.len() != encoded.len() || predicted.is_empty() {
        return Err(KaeError::shape(
            "loss_latent_consistency",
            format!(
                "{} predicted vs {} encoded steps",
                predicted.len(),
                encoded.len()
            ),
        ));
    }
    let mut total = None;
    for (&p, &e) in predicted.iter().zip(encoded) {
        same_shape(g, "loss_latent_consistency", p, e)?;
        let batch = batch_rows(g, "loss_latent_consistency", p)?;
        let d = g.sub(p, e)?;
        let sq = g.square(d)?;
        let s = g.sum(sq)?;
        let s = g.scale(s, 1.0 / batch as f64)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    Ok(total.expect("non-empty"))
}

/// Forward error `‖step(z_t, Δt) − z_{t+1}‖²` plus backward error
/// `‖step(z_{t+1}, −Δt) − z_t‖²`, averaged over the batch.
///
/// Only meaningful for nonzero latents: `z ≡ 0` satisfies both terms for any
/// operator.
pub fn loss_linearity<F>(
    g: &mut Graph,
    z_t: NodeId,
    z_next: NodeId,
    dt: f64,
    mut step: F,
) -> Result<NodeId>
where
    F: FnMut(&mut Graph, NodeId, f64) -> Result<NodeId>,
{
    if !(dt > 0.0) {
        return Err(KaeError::InvalidArgument(format!(
            "loss_linearity needs Δt > 0, got {dt}"
        )));
    }
    same_shape(g, "loss_linearity", z_t, z_next)?;
    let batch = batch_rows(g, "loss_linearity", z_t)?;
    let fwd = step(g, z_t, dt)?;
    let bwd = step(g, z_next, -dt)?;
    let ef = g.sub(fwd, z_next)?;
    let eb = g.sub(bwd, z_t)?;
    let sf = g.square(ef)?;
    let sb = g.square(eb)?;
    let s = g.add(sf, sb)?;
    let s = g.sum(s)?;
    g.scale(s, 1.0 / batch as f64)
}

/// Row-wise Euclidean norms `[B, 1]`.
fn row_norms(g: &mut Graph, z: NodeId) -> Result<NodeId> {
    let sq = g.square(z)?;
    let s = g.sum_axis(sq, 1)?;
    g.sqrt(s)
}

/// `1 − ⟨ẑ, z⟩ / (‖ẑ‖‖z‖ + ε)` per row, averaged over the batch.
pub fn loss_cosine_dir(g: &mut Graph, zhat: NodeId, z: NodeId) -> Result<NodeId> {
    same_shape(g, "loss_cosine_dir", zhat, z)?;
    let batch = batch_rows(g, "loss_cosine_dir", zhat)?;
    let prod = g.mul(zhat, z)?;
    let dot = g.sum_axis(prod, 1)?;
    let na = row_norms(g, zhat)?;
    let nb = row_norms(g, z)?;
    let den = g.mul(na, nb)?;
    let eps = g.scalar(COSINE_EPS);
    let den = g.add(den, eps)?;
    let cos = g.div(dot, den)?;
    let cos_sum = g.sum(cos)?;
    let one = g.scalar(1.0);
    let mean_cos = g.scale(cos_sum, 1.0 / batch as f64)?;
    g.sub(one, mean_cos)
}

/// `(‖z_{t+1}‖ − ‖z_t‖)²` per row, averaged over the batch.
pub fn loss_energy(g: &mut Graph, z_t: NodeId, z_next: NodeId) -> Result<NodeId> {
    same_shape(g, "loss_energy", z_t, z_next)?;
    let batch = batch_rows(g, "loss_energy", z_t)?;
    let a = row_norms(g, z_t)?;
    let b = row_norms(g, z_next)?;
    let d = g.sub(b, a)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / batch as f64)
}

/// Mean over adjacent pairs of `‖(x̂_{j+1} − x̂_j) − (x_{j+1} − x_j)‖²`
/// (summed over features, averaged over the batch).
pub fn loss_sobolev_time(
    g: &mut Graph,
    xhat: &[NodeId],
    x: &[NodeId],
    shape: FieldShape,
) -> Result<NodeId> {
    if xhat.len() != x.len() || xhat.len() < 2 {
        return Err(KaeError::shape(
            "loss_sobolev_time",
            format!(
                "need two or more frames on both sides, got {} and {}",
                xhat.len(),
                x.len()
            ),
        ));
    }
    let mut diffs = Vec::with_capacity(x.len());
    let mut batch = 0;
    for (&a, &b) in xhat.iter().zip(x) {
        batch = check_fields(g, "loss_sobolev_time", a, b, shape)?;
        diffs.push(g.sub(a, b)?);
    }
    let pairs = diffs.len() - 1;
    let mut total = None;
    for w in diffs.windows(2) {
        let v = g.sub(w[1], w[0])?;
        let sq = g.square(v)?;
        let s = g.sum(sq)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    g.scale(
        total.expect("at least one pair"),
        1.0 / (pairs * batch) as f64,
    )
}

/// Squared mismatch of forward differences along width and height, summed
/// over the field and averaged over the batch.
pub fn loss_sobolev_space(
    g: &mut Graph,
    xhat: NodeId,
    x: NodeId,
    shape: FieldShape,
) -> Result<NodeId> {
    let batch = check_fields(g, "loss_sobolev_space", xhat, x, shape)?;
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    if h < 2 || w < 2 {
        return Err(KaeError::shape(
            "loss_sobolev_space",
            format!("field extent {h}x{w}; both axes need at least 2 points"),
        ));
    }
    let d = g.sub(xhat, x)?;
    let d = g.reshape(d, &[batch, c, h, w])?;
    let right = g.slice(d, 3, 1, w - 1)?;
    let left = g.slice(d, 3, 0, w - 1)?;
    let dx = g.sub(right, left)?;
    let down = g.slice(d, 2, 1, h - 1)?;
    let up = g.slice(d, 2, 0, h - 1)?;
    let dy = g.sub(down, up)?;
    let sx = g.square(dx)?;
    let sx = g.sum(sx)?;
    let sy = g.square(dy)?;
    let sy = g.sum(sy)?;
    let s = g.add(sx, sy)?;
    g.scale(s, 1.0 / batch as f64)
}
