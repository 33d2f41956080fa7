use crate::autodiff::{Graph, NodeId};
use crate::data::WindowBatch;
use crate::dynamics::{rollout_graph, step_graph, Scheme};
use crate::error::{KaeError, Result};
use crate::loss::{
    loss_cosine_dir, loss_energy, loss_latent_consistency, loss_linearity, loss_pred, loss_recon,
    loss_sobolev_space, loss_sobolev_time, loss_spectral, temporal_weights, LossTerms, LossWeights,
};
use crate::model::{KoopmanAutoencoder, Parameters};
use crate::tensor::Tensor;

/// The full objective for one group of windows, built on a fresh graph with
/// every model parameter as a trainable leaf.
#[derive(Debug)]
pub struct LossGraph {
    pub graph: Graph,
    pub terms: LossTerms,
    pub total: NodeId,
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, count: usize, width: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(count * width);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::new(vec![count, width], data)
}

/// Mean of several scalar nodes.
fn average(g: &mut Graph, parts: &[NodeId]) -> Result<NodeId> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p)?;
    }
    g.scale(acc, 1.0 / parts.len() as f64)
}

/// Builds `L_total` for `windows`, each conditioned on the matching row of
/// `embeddings`.
///
/// Targets `x_{t+j}` are stacked step-major, so the rollout is decoded and
/// the targets are encoded with one matrix product each.
pub fn build_loss_graph(
    model: &KoopmanAutoencoder,
    windows: &[WindowBatch<'_>],
    embeddings: &[Vec<f64>],
    dt: f64,
    scheme: Scheme,
    weights: &LossWeights,
) -> Result<LossGraph> {
    let b = windows.len();
    if b == 0 || embeddings.len() != b {
        return Err(KaeError::InvalidArgument(format!(
            "{b} windows with {} embeddings",
            embeddings.len()
        )));
    }
    let n = windows[0].horizon();
    if n == 0 || windows.iter().any(|w| w.horizon() != n) {
        return Err(KaeError::InvalidArgument(
            "windows in a batch must share a horizon of at least 1".into(),
        ));
    }
    let shape = model.state;
    let nd = shape.numel();
    let ke = embeddings[0].len();

    let mut g = Graph::new();
    let m = model.bound(&model.bind(&mut g, true)?)?;

    let x_prev = g.constant(stack(windows.iter().map(|w| w.context[0]), b, nd)?);
    let x_t = g.constant(stack(windows.iter().map(|w| w.context[1]), b, nd)?);
    let targets = stack(
        (0..n).flat_map(|j| windows.iter().map(move |w| w.targets[j])),
        n * b,
        nd,
    )?;
    let targets = g.constant(targets);
    let x_j: Vec<NodeId> = (0..n)
        .map(|j| g.slice(targets, 0, j * b, b))
        .collect::<Result<_>>()?;
    let emb = g.constant(stack(embeddings.iter().map(Vec::as_slice), b, ke)?);

    let z0 = m.encoders.encode(&mut g, x_t, x_prev)?;
    let xhat_t = m.decoder.forward(&mut g, z0)?;
    let mut terms = LossTerms {
        recon: Some(loss_recon(&mut g, xhat_t, x_t, shape)?),
        ..LossTerms::default()
    };

    let field = m.operator.field(&mut g, emb)?;
    let zs = rollout_graph(&mut g, &field, z0, n, dt, scheme)?;
    let z_all = g.concat(&zs, 0)?;
    let xhat_all = m.decoder.forward(&mut g, z_all)?;
    let xhat_j: Vec<NodeId> = (0..n)
        .map(|j| g.slice(xhat_all, 0, j * b, b))
        .collect::<Result<_>>()?;

    if weights.alpha > 0.0 {
        let w = temporal_weights(weights.temporal, n)?;
        terms.pred = Some(loss_pred(&mut g, &xhat_j, &x_j, &w, shape)?);
    }

    if weights.beta > 0.0 {
        let mut enc_all = m.encoders.encode_present(&mut g, targets)?;
        if weights.detach_targets {
            enc_all = g.constant(g.value(enc_all).clone());
        }
        let enc_j: Vec<NodeId> = (0..n)
            .map(|j| g.slice(enc_all, 0, j * b, b))
            .collect::<Result<_>>()?;
        terms.consistency = Some(loss_latent_consistency(&mut g, &zs, &enc_j)?);

        let mut encoded = vec![z0];
        encoded.extend(&enc_j);
        let mut lin = Vec::with_capacity(n);
        for pair in encoded.windows(2) {
            lin.push(loss_linearity(&mut g, pair[0], pair[1], dt, |g, z, h| {
                step_graph(g, &field, z, h, scheme)
            })?);
        }
        terms.linearity = Some(average(&mut g, &lin)?);

        if weights.w_cos > 0.0 {
            let cos = zs
                .iter()
                .zip(&enc_j)
                .map(|(&p, &e)| loss_cosine_dir(&mut g, p, e))
                .collect::<Result<Vec<_>>>()?;
            terms.cosine = Some(average(&mut g, &cos)?);
        }

        let mut predicted = vec![z0];
        predicted.extend(&zs);
        let energy = predicted
            .windows(2)
            .map(|p| loss_energy(&mut g, p[0], p[1]))
            .collect::<Result<Vec<_>>>()?;
        terms.energy = Some(average(&mut g, &energy)?);
    }

    if weights.lambda_phys > 0.0 {
        if weights.w_sobolev_time > 0.0 {
            let mut pred = vec![xhat_t];
            pred.extend(&xhat_j);
            let mut truth = vec![x_t];
            truth.extend(&x_j);
            terms.sobolev_time = Some(loss_sobolev_time(&mut g, &pred, &truth, shape)?);
        }
        // Averaged over every predicted frame: the stacked rows form one
        // batch of n·b fields.
        if weights.w_sobolev_space > 0.0 {
            terms.sobolev_space = Some(loss_sobolev_space(&mut g, xhat_all, targets, shape)?);
        }
        if weights.w_spectral > 0.0 {
            terms.spectral = Some(loss_spectral(&mut g, xhat_all, targets, shape)?);
        }
    }

    if weights.stability > 0.0 {
        terms.stability = Some(m.operator.correction_penalty(&mut g, emb)?);
    }

    let total = terms.total(&mut g, weights)?;
    Ok(LossGraph {
        graph: g,
        terms,
        total,
    })
}
