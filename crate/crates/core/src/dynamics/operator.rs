use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::step::LatentField;
use crate::autodiff::{Graph, NodeId};
use crate::error::{KaeError, Result};
use crate::linalg::SquareMatrix;
use crate::model::{Activation, Bindings, BoundMlp, Mlp, ParamEmbedding, Parameters};
use crate::tensor::Tensor;

pub const S_NAME: &str = "koopman.s";
pub const D_NAME: &str = "koopman.d";
pub const LORA_A_NAME: &str = "koopman.lora_a";
pub const LORA_B_NAME: &str = "koopman.lora_b";
const HYPERNET_NAME: &str = "koopman.hypernet";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorInit {
    /// Initial `softplus(d)` on every mode.
    pub dissipation: f64,
    /// Standard deviation of the entries of `S`.
    pub skew_std: f64,
}

/// Parameter-conditioned generator
/// `K(φ) = K₀ + B·diag(scales(φ))·A·gate(φ)` with
/// `K₀ = (S − Sᵀ)/2 − diag(softplus(d))`.
///
/// The hypernet maps the embedding of φ to `r + 1` outputs: the first `r`
/// are the per-rank scales, the last one sets `gate = 1 + tanh(·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanOperator {
    pub s: Tensor,
    /// `[1, Nz]`.
    pub d: Tensor,
    /// `[r, Nz]`.
    pub lora_a: Tensor,
    /// `[Nz, r]`.
    pub lora_b: Tensor,
    pub hypernet: Mlp,
    pub embed: ParamEmbedding,
}

impl KoopmanOperator {
    /// `lora_B` starts at zero, so the initial generator is `K₀` for every φ.
    pub fn new(
        nz: usize,
        rank: usize,
        hyper_hidden: usize,
        embed: ParamEmbedding,
        init: OperatorInit,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if nz == 0 || rank == 0 || rank > nz {
            return Err(KaeError::Config(format!(
                "operator rank must be in 1..={nz}, got {rank}"
            )));
        }
        if !(init.dissipation > 0.0) {
            return Err(KaeError::Config("initial dissipation must be > 0".into()));
        }
        let skew = Normal::new(0.0, init.skew_std.max(0.0))
            .map_err(|e| KaeError::Config(e.to_string()))?;
        let s = Tensor::new(
            vec![nz, nz],
            (0..nz * nz).map(|_| skew.sample(rng)).collect(),
        )?;
        let d = Tensor::full(&[1, nz], inverse_softplus(init.dissipation));
        let a_dist = Normal::new(0.0, (1.0 / nz as f64).sqrt()).expect("positive std");
        let lora_a = Tensor::new(
            vec![rank, nz],
            (0..rank * nz).map(|_| a_dist.sample(rng)).collect(),
        )?;
        let lora_b = Tensor::zeros(&[nz, rank]);
        let hypernet = Mlp::new(
            HYPERNET_NAME,
            &[embed.dim(), hyper_hidden.max(1), rank + 1],
            Activation::Tanh,
            rng,
        )?;
        Ok(Self {
            s,
            d,
            lora_a,
            lora_b,
            hypernet,
            embed,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.s.shape()[0]
    }

    pub fn rank(&self) -> usize {
        self.lora_a.shape()[0]
    }

    pub fn bound(&self, b: &Bindings) -> Result<BoundOperator> {
        Ok(BoundOperator {
            s: b.get(S_NAME)?,
            d: b.get(D_NAME)?,
            a: b.get(LORA_A_NAME)?,
            b: b.get(LORA_B_NAME)?,
            hyper: self.hypernet.bound(b)?,
            nz: self.latent_dim(),
        })
    }

    fn embedding_row(&self, phi: f64) -> Result<Tensor> {
        if !phi.is_finite() {
            return Err(KaeError::InvalidArgument(format!(
                "parameter φ = {phi} is not finite"
            )));
        }
        let e = self.embed.embed(phi);
        Tensor::new(vec![1, e.len()], e)
    }

    /// `K₀` alone.
    pub fn base_generator(&self) -> Result<SquareMatrix> {
        let mut g = Graph::new();
        let op = self.bound(&self.bind(&mut g, false)?)?;
        let k0 = op.base(&mut g)?;
        SquareMatrix::from_tensor(g.value(k0))
    }

    /// `K(φ)`.
    pub fn koopman_matrix(&self, phi: f64) -> Result<SquareMatrix> {
        let emb = self.embedding_row(phi)?;
        let mut g = Graph::new();
        let op = self.bound(&self.bind(&mut g, false)?)?;
        let e = g.constant(emb);
        let k = op.matrix(&mut g, e)?;
        SquareMatrix::from_tensor(g.value(k))
    }

    /// `scales(φ)·gate(φ)`, one entry per rank.
    pub fn gains(&self, phi: f64) -> Result<Vec<f64>> {
        let emb = self.embedding_row(phi)?;
        let mut g = Graph::new();
        let op = self.bound(&self.bind(&mut g, false)?)?;
        let e = g.constant(emb);
        let gains = op.gains(&mut g, e)?;
        Ok(g.value(gains).data().to_vec())
    }
}

impl Parameters for KoopmanOperator {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(S_NAME, &self.s);
        f(D_NAME, &self.d);
        f(LORA_A_NAME, &self.lora_a);
        f(LORA_B_NAME, &self.lora_b);
        self.hypernet.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(S_NAME, &mut self.s);
        f(D_NAME, &mut self.d);
        f(LORA_A_NAME, &mut self.lora_a);
        f(LORA_B_NAME, &mut self.lora_b);
        self.hypernet.visit_mut(f);
    }
}

/// A [`KoopmanOperator`] whose parameters live in a graph.
#[derive(Debug, Clone)]
pub struct BoundOperator {
    s: NodeId,
    d: NodeId,
    a: NodeId,
    b: NodeId,
    hyper: BoundMlp,
    nz: usize,
}

impl BoundOperator {
    /// `K₀` as a `[Nz, Nz]` node.
    pub fn base(&self, g: &mut Graph) -> Result<NodeId> {
        let st = g.transpose(self.s)?;
        let skew = g.sub(self.s, st)?;
        let skew = g.scale(skew, 0.5)?;
        let diss = g.softplus(self.d)?;
        let eye = g.constant(Tensor::eye(self.nz));
        let diag = g.mul(eye, diss)?;
        g.sub(skew, diag)
    }

    /// Per-sample gains `[B, r]` from embeddings `[B, K_e]`.
    pub fn gains(&self, g: &mut Graph, emb: NodeId) -> Result<NodeId> {
        let out = self.hyper.forward(g, emb)?;
        let r = g.shape(out)[1] - 1;
        let scales = g.slice(out, 1, 0, r)?;
        let raw_gate = g.slice(out, 1, r, 1)?;
        let t = g.tanh(raw_gate)?;
        let one = g.scalar(1.0);
        let gate = g.add(t, one)?;
        g.mul(scales, gate)
    }

    /// Explicit `K(φ)` for a single embedding row `[1, K_e]`.
    pub fn matrix(&self, g: &mut Graph, emb: NodeId) -> Result<NodeId> {
        if g.shape(emb)[0] != 1 {
            return Err(KaeError::shape(
                "koopman_matrix",
                format!("expected one embedding row, got {:?}", g.shape(emb)),
            ));
        }
        let k0 = self.base(g)?;
        let gains = self.gains(g, emb)?;
        let bg = g.mul(self.b, gains)?;
        let corr = g.matmul(bg, self.a)?;
        g.add(k0, corr)
    }

    /// Right-hand side for a batch whose samples each carry their own φ,
    /// without materializing one matrix per sample.
    pub fn field(&self, g: &mut Graph, emb: NodeId) -> Result<LatentField> {
        let k0 = self.base(g)?;
        let k0t = g.transpose(k0)?;
        let at = g.transpose(self.a)?;
        let bt = g.transpose(self.b)?;
        let gains = self.gains(g, emb)?;
        Ok(LatentField::Factored { k0t, at, bt, gains })
    }

    /// Mean over the batch of `‖sym(B·diag(G)·A)‖_F²`. Bounds how far the
    /// correction can push the numerical abscissa past that of `K₀` (≤ 0).
    pub fn correction_penalty(&self, g: &mut Graph, emb: NodeId) -> Result<NodeId> {
        let gains = self.gains(g, emb)?;
        let (batch, r) = (g.shape(gains)[0], g.shape(gains)[1]);
        let gains = g.reshape(gains, &[batch, 1, r])?;
        let bg = g.mul(self.b, gains)?;
        let corr = g.matmul(bg, self.a)?;
        let ct = g.transpose(corr)?;
        let sym = g.add(corr, ct)?;
        let sym = g.scale(sym, 0.5)?;
        let sq = g.square(sym)?;
        let total = g.sum(sq)?;
        g.scale(total, 1.0 / batch as f64)
    }
}

/// `y` such that `softplus(y) = x`, for `x > 0`.
pub fn inverse_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp_m1().ln()
    }
}
