use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bindings, Parameters};
use crate::autodiff::{Graph, NodeId};
use crate::error::{KaeError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    Tanh,
    /// No nonlinearity; exposes the layers as a plain composition of
    /// affine maps.
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Silu => g.silu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Fully connected stack. Layer `i` maps `widths[i] → widths[i+1]`; the
/// activation sits between layers, never after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    name: String,
    widths: Vec<usize>,
    pub activation: Activation,
    /// `(weight [in, out], bias [1, out])` per layer.
    pub layers: Vec<(Tensor, Tensor)>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        name: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(KaeError::Config(format!(
                "`{name}` needs at least two positive layer widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                (
                    Tensor::new(vec![fan_in, fan_out], weight).expect("sized"),
                    Tensor::zeros(&[1, fan_out]),
                )
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            widths: widths.to_vec(),
            activation,
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    /// `Σ (wᵢ·wᵢ₊₁ + wᵢ₊₁)` over consecutive widths.
    pub fn param_count_for(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.numel() + b.numel()).sum()
    }

    pub fn zero_last_layer(&mut self) {
        if let Some((w, b)) = self.layers.last_mut() {
            w.data_mut().fill(0.0);
            b.data_mut().fill(0.0);
        }
    }

    pub fn scale_last_layer(&mut self, factor: f64) {
        if let Some((w, _)) = self.layers.last_mut() {
            w.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn weight_name(&self, i: usize) -> String {
        format!("{}.{i}.weight", self.name)
    }

    fn bias_name(&self, i: usize) -> String {
        format!("{}.{i}.bias", self.name)
    }

    pub fn bound(&self, b: &Bindings) -> Result<BoundMlp> {
        let layers = (0..self.layers.len())
            .map(|i| Ok((b.get(&self.weight_name(i))?, b.get(&self.bias_name(i))?)))
            .collect::<Result<_>>()?;
        Ok(BoundMlp {
            layers,
            activation: self.activation,
        })
    }
}

impl Parameters for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, (w, b)) in self.layers.iter().enumerate() {
            f(&self.weight_name(i), w);
            f(&self.bias_name(i), b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for i in 0..self.layers.len() {
            let (wn, bn) = (self.weight_name(i), self.bias_name(i));
            let (w, b) = &mut self.layers[i];
            f(&wn, w);
            f(&bn, b);
        }
    }
}

/// An [`Mlp`] whose parameters live in a graph.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(NodeId, NodeId)>,
    activation: Activation,
}

impl BoundMlp {
    /// Applies the stack to a batch `x: [B, in]`.
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let xw = g.matmul(h, w)?;
            h = g.add(xw, b)?;
            if i < last {
                h = self.activation.apply(g, h)?;
            }
        }
        Ok(h)
    }
}
