use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::ParamEmbedding;
use super::mlp::{Activation, BoundMlp, Mlp};
use super::params::{Bindings, Parameters};
use crate::autodiff::{Graph, NodeId};
use crate::dynamics::{KoopmanOperator, LatentState, OperatorInit};
use crate::error::{KaeError, Result};
use crate::tensor::{FieldShape, Tensor};

/// Present- and history-stream encoders. Independent parameters, same
/// widths.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub present: Mlp,
    pub history: Mlp,
}

impl EncoderPair {
    pub fn new(widths: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            present: Mlp::new("encoder.present", widths, activation, rng)?,
            history: Mlp::new("encoder.history", widths, activation, rng)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.present.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.present.output_dim()
    }

    pub fn bound(&self, b: &Bindings) -> Result<BoundEncoders> {
        Ok(BoundEncoders {
            present: self.present.bound(b)?,
            history: self.history.bound(b)?,
        })
    }

    /// `½ (E_present(x_t) + E_history(x_prev))`, stamped with time `t`.
    pub fn encode(&self, x_t: &[f64], x_prev: &[f64], t: f64) -> Result<LatentState> {
        self.check_state(x_t)?;
        self.check_state(x_prev)?;
        let mut g = Graph::new();
        let enc = self.bound(&self.bind(&mut g, false)?)?;
        let a = g.constant(row(x_t));
        let b = g.constant(row(x_prev));
        let z = enc.encode(&mut g, a, b)?;
        Ok(LatentState::new(g.value(z).data().to_vec(), t))
    }

    pub fn encode_present(&self, x_t: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x_t)?;
        let mut g = Graph::new();
        let enc = self.bound(&self.bind(&mut g, false)?)?;
        let x = g.constant(row(x_t));
        let z = enc.encode_present(&mut g, x)?;
        Ok(g.value(z).data().to_vec())
    }

    /// History stream alone.
    pub fn encode_history(&self, x_prev: &[f64]) -> Result<Vec<f64>> {
        self.check_state(x_prev)?;
        let mut g = Graph::new();
        let enc = self.bound(&self.bind(&mut g, false)?)?;
        let x = g.constant(row(x_prev));
        let z = enc.history.forward(&mut g, x)?;
        Ok(g.value(z).data().to_vec())
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(KaeError::shape(
                "encode",
                format!(
                    "state of length {}, encoder expects {}",
                    x.len(),
                    self.state_dim()
                ),
            ));
        }
        Ok(())
    }
}

impl Parameters for EncoderPair {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.present.visit(f);
        self.history.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.present.visit_mut(f);
        self.history.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct BoundEncoders {
    pub present: BoundMlp,
    pub history: BoundMlp,
}

impl BoundEncoders {
    /// Batch version of [`EncoderPair::encode`]: `[B, N_d]` twice → `[B, Nz]`.
    pub fn encode(&self, g: &mut Graph, x_t: NodeId, x_prev: NodeId) -> Result<NodeId> {
        let p = self.present.forward(g, x_t)?;
        let h = self.history.forward(g, x_prev)?;
        let s = g.add(p, h)?;
        g.scale(s, 0.5)
    }

    pub fn encode_present(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        self.present.forward(g, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub mlp: Mlp,
}

impl Decoder {
    pub fn new(widths: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new("decoder", widths, activation, rng)?,
        })
    }

    /// Reconstructs a state from a latent. The timestamp plays no part.
    pub fn decode(&self, z: &LatentState) -> Result<Vec<f64>> {
        if z.z.len() != self.mlp.input_dim() {
            return Err(KaeError::shape(
                "decode",
                format!(
                    "latent of length {}, decoder expects {}",
                    z.z.len(),
                    self.mlp.input_dim()
                ),
            ));
        }
        let mut g = Graph::new();
        let dec = self.mlp.bound(&self.bind(&mut g, false)?)?;
        let zin = g.constant(row(&z.z));
        let x = dec.forward(&mut g, zin)?;
        Ok(g.value(x).data().to_vec())
    }
}

impl Parameters for Decoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.mlp.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.mlp.visit_mut(f);
    }
}

/// Architecture and initialization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Hidden widths between the state and the latent (mirrored in the
    /// decoder).
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lora_rank: usize,
    pub hyper_hidden: usize,
    /// Number of RBF centers when they are derived from the data range.
    pub embed_count: usize,
    /// Explicit RBF centers; derived from the training φ range when absent.
    pub embed_centers: Option<Vec<f64>>,
    pub embed_bandwidth: Option<f64>,
    pub embed_noise: f64,
    /// Initial per-mode dissipation `softplus(d)`.
    pub init_dissipation: f64,
    /// Standard deviation of the initial entries of `S`.
    pub init_skew_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            hidden: vec![256],
            activation: Activation::Silu,
            lora_rank: 4,
            hyper_hidden: 16,
            embed_count: 8,
            embed_centers: None,
            embed_bandwidth: None,
            embed_noise: 0.0,
            init_dissipation: 0.05,
            init_skew_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn encoder_widths(&self, state: FieldShape) -> Vec<usize> {
        let mut w = vec![state.numel()];
        w.extend(&self.hidden);
        w.push(self.latent_dim);
        w
    }

    pub fn decoder_widths(&self, state: FieldShape) -> Vec<usize> {
        let mut w = vec![self.latent_dim];
        w.extend(self.hidden.iter().rev());
        w.push(state.numel());
        w
    }

    /// The embedding for a given training φ range.
    pub fn embedding(&self, phi_lo: f64, phi_hi: f64) -> Result<ParamEmbedding> {
        match &self.embed_centers {
            Some(c) => {
                let bw = match (self.embed_bandwidth, c.len()) {
                    (Some(b), _) => b,
                    (None, n) if n >= 2 => (c[n - 1] - c[0]) / (n - 1) as f64,
                    _ => 1.0,
                };
                ParamEmbedding::new(c.clone(), bw, self.embed_noise)
            }
            None => {
                let mut e =
                    ParamEmbedding::spanning(phi_lo, phi_hi, self.embed_count, self.embed_noise)?;
                if let Some(b) = self.embed_bandwidth {
                    e = ParamEmbedding::new(e.centers, b, self.embed_noise)?;
                }
                Ok(e)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(KaeError::Config("model.latent_dim must be >= 1".into()));
        }
        if self.lora_rank == 0 || self.lora_rank > self.latent_dim {
            return Err(KaeError::Config(format!(
                "model.lora_rank must be in 1..={}, got {}",
                self.latent_dim, self.lora_rank
            )));
        }
        if !(self.init_dissipation > 0.0) {
            return Err(KaeError::Config(
                "model.init_dissipation must be > 0".into(),
            ));
        }
        if !(self.init_skew_std >= 0.0) {
            return Err(KaeError::Config("model.init_skew_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Encoders, decoder and the parametric latent operator.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanAutoencoder {
    pub state: FieldShape,
    pub encoders: EncoderPair,
    pub decoder: Decoder,
    pub operator: KoopmanOperator,
}

impl KoopmanAutoencoder {
    pub fn new(
        cfg: &ModelConfig,
        state: FieldShape,
        embed: ParamEmbedding,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoders = EncoderPair::new(&cfg.encoder_widths(state), cfg.activation, &mut rng)?;
        let decoder = Decoder::new(&cfg.decoder_widths(state), cfg.activation, &mut rng)?;
        let operator = KoopmanOperator::new(
            cfg.latent_dim,
            cfg.lora_rank,
            cfg.hyper_hidden,
            embed,
            OperatorInit {
                dissipation: cfg.init_dissipation,
                skew_std: cfg.init_skew_std,
            },
            &mut rng,
        )?;
        Ok(Self {
            state,
            encoders,
            decoder,
            operator,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.operator.latent_dim()
    }

    pub fn bound(&self, b: &Bindings) -> Result<BoundModel> {
        Ok(BoundModel {
            encoders: self.encoders.bound(b)?,
            decoder: self.decoder.mlp.bound(b)?,
            operator: self.operator.bound(b)?,
        })
    }
}

impl Parameters for KoopmanAutoencoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoders.visit(f);
        self.decoder.visit(f);
        self.operator.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoders.visit_mut(f);
        self.decoder.visit_mut(f);
        self.operator.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoders: BoundEncoders,
    pub decoder: BoundMlp,
    pub operator: crate::dynamics::BoundOperator,
}

fn row(x: &[f64]) -> Tensor {
    Tensor::new(vec![1, x.len()], x.to_vec()).expect("row vector")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(77)
    }

    #[test]
    fn encode_is_the_mean_of_both_streams() {
        let enc = EncoderPair::new(&[6, 10, 3], Activation::Silu, &mut rng()).unwrap();
        let x: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
        let xp: Vec<f64> = (0..6).map(|i| 0.1 * (i * i) as f64 - 1.0).collect();
        let u = enc.encode_present(&x).unwrap();
        let v = enc.encode_history(&xp).unwrap();
        let z = enc.encode(&x, &xp, 0.5).unwrap();
        assert_eq!(z.t, 0.5);
        for i in 0..3 {
            assert_eq!(z.z[i], 0.5 * (u[i] + v[i]));
            // 2·encode − present recovers history exactly.
            assert_eq!(2.0 * z.z[i] - u[i], v[i]);
        }
    }

    #[test]
    fn zero_final_layers_give_zero_latent() {
        let mut enc = EncoderPair::new(&[4, 8, 2], Activation::Silu, &mut rng()).unwrap();
        enc.present.zero_last_layer();
        enc.history.zero_last_layer();
        let z = enc
            .encode(&[1.0, -2.0, 3.0, 0.5], &[0.0, 1.0, 1.0, 1.0], 0.0)
            .unwrap();
        assert_eq!(z.z, vec![0.0, 0.0]);
    }

    #[test]
    fn swapping_inputs_changes_latent() {
        let enc = EncoderPair::new(&[5, 7, 3], Activation::Silu, &mut rng()).unwrap();
        let a = [0.2, -0.4, 1.0, 0.0, 0.3];
        let b = [-1.0, 0.5, 0.1, 0.9, -0.2];
        assert_ne!(
            enc.encode(&a, &b, 0.0).unwrap().z,
            enc.encode(&b, &a, 0.0).unwrap().z
        );
    }

    #[test]
    fn linear_mode_is_composition_of_weights() {
        let mut r = rng();
        let enc = EncoderPair::new(&[3, 4, 2], Activation::Identity, &mut r).unwrap();
        let x = [0.5, -1.5, 2.0];
        let (w1, w2) = (&enc.present.layers[0].0, &enc.present.layers[1].0);
        // Row-vector convention: z = x·W1·W2.
        let mut h = [0.0; 4];
        for j in 0..4 {
            for i in 0..3 {
                h[j] += x[i] * w1.data()[i * 4 + j];
            }
        }
        let mut z = [0.0; 2];
        for j in 0..2 {
            for i in 0..4 {
                z[j] += h[i] * w2.data()[i * 2 + j];
            }
        }
        let got = enc.encode_present(&x).unwrap();
        for j in 0..2 {
            assert!((got[j] - z[j]).abs() < 1e-14);
        }
        assert_eq!(got, enc.encode_present(&x).unwrap());
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let enc = EncoderPair::new(&[4, 6, 3], Activation::Silu, &mut rng()).unwrap();
        let mut g = Graph::new();
        let bound = enc.bound(&enc.bind(&mut g, true).unwrap()).unwrap();
        let x = g.constant(Tensor::new(vec![1, 4], vec![0.3, -0.8, 1.1, 0.05]).unwrap());
        let z = bound.encode_present(&mut g, x).unwrap();
        let sq = g.square(z).unwrap();
        let loss = g.sum(sq).unwrap();
        for name in g.trainable_names() {
            if !name.starts_with("encoder.present") {
                continue;
            }
            let err = crate::autodiff::finite_difference_check(&mut g, loss, &name, 1e-5).unwrap();
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn decoder_zero_weights_and_timestamp_independence() {
        let mut dec = Decoder::new(&[3, 5, 4], Activation::Silu, &mut rng()).unwrap();
        let a = dec
            .decode(&LatentState::new(vec![0.1, 0.2, 0.3], 0.0))
            .unwrap();
        let b = dec
            .decode(&LatentState::new(vec![0.1, 0.2, 0.3], 9.5))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        dec.mlp.visit_mut(&mut |_, t| t.data_mut().fill(0.0));
        assert_eq!(
            dec.decode(&LatentState::new(vec![1.0, 2.0, 3.0], 0.0))
                .unwrap(),
            vec![0.0; 4]
        );
        assert!(dec.decode(&LatentState::new(vec![1.0], 0.0)).is_err());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = ModelConfig {
            latent_dim: 16,
            hidden: vec![32, 24],
            ..ModelConfig::default()
        };
        let shape = FieldShape::new(2, 4, 4);
        let embed = cfg.embedding(0.0, 1.0).unwrap();
        let m = KoopmanAutoencoder::new(&cfg, shape, embed, 1).unwrap();
        let widths = cfg.encoder_widths(shape);
        assert_eq!(widths, vec![32, 32, 24, 16]);
        let closed = Mlp::param_count_for(&widths);
        assert_eq!(closed, 32 * 32 + 32 + 32 * 24 + 24 + 24 * 16 + 16);
        assert_eq!(m.encoders.present.param_count(), closed);
        assert_eq!(m.encoders.history.param_count(), closed);
        assert_eq!(
            m.decoder.mlp.param_count(),
            Mlp::param_count_for(&cfg.decoder_widths(shape))
        );
    }

    #[test]
    fn outputs_finite_on_bounded_inputs() {
        let cfg = ModelConfig {
            latent_dim: 8,
            hidden: vec![32],
            ..ModelConfig::default()
        };
        let shape = FieldShape::new(1, 4, 4);
        let m = KoopmanAutoencoder::new(&cfg, shape, cfg.embedding(0.0, 1.0).unwrap(), 3).unwrap();
        let mut r = rng();
        for _ in 0..50 {
            let x: Vec<f64> = (0..16).map(|_| r.random_range(-10.0..10.0)).collect();
            let xp: Vec<f64> = (0..16).map(|_| r.random_range(-10.0..10.0)).collect();
            let z = m.encoders.encode(&x, &xp, 0.0).unwrap();
            assert!(z.z.iter().all(|v| v.is_finite()));
            assert!(m.decoder.decode(&z).unwrap().iter().all(|v| v.is_finite()));
        }
    }
}
