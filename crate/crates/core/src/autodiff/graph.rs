use std::collections::BTreeMap;

use super::kernels::{
    broadcast_map, broadcast_shape, gemm_nn, gemm_nt, gemm_tn, sigmoid, softplus, split_axis,
};
use crate::error::{KaeError, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Unary {
    Tanh,
    Silu,
    Square,
    Sqrt,
    Cos,
    Softplus,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Silu => "silu",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Cos => "cos",
            Unary::Softplus => "softplus",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Silu => x * sigmoid(x),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::Cos => x.cos(),
            Unary::Softplus => softplus(x),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        let d = match self {
            Unary::Tanh => 1.0 - y * y,
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Square => 2.0 * x,
            // Subgradient 0 at the origin, so |u| = sqrt(u²) behaves like abs.
            Unary::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            Unary::Cos => -x.sin(),
            Unary::Softplus => sigmoid(x),
        };
        #[cfg(test)]
        let d = fault::perturb(self, d);
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => a / b,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(Binary, NodeId, NodeId),
    Scale(NodeId, f64),
    Unary(Unary, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        src: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    SumAxis {
        src: NodeId,
        axis: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(b, ..) => b.name(),
            Op::Scale(..) => "scale",
            Op::Unary(u, _) => u.name(),
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis { .. } => "sum_axis",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Unary(_, a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Slice { src, .. } | Op::SumAxis { src, .. } => vec![*src],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    /// Whether any requires-grad leaf feeds this node.
    needs_grad: bool,
}

/// A leaf that can be rebound by name.
#[derive(Debug, Clone)]
struct LeafInfo {
    id: NodeId,
    requires_grad: bool,
}

/// Define-by-run record of primitive tensor operations.
///
/// Each builder call evaluates its result immediately and appends a node,
/// so node order is a topological order. Named leaves can be rebound with
/// [`Graph::set_input`] and the whole record replayed with
/// [`Graph::replay`] or [`Graph::evaluate`]; replay runs exactly the same
/// arithmetic in the same order, so values are bit-identical for
/// identical inputs.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: BTreeMap<String, LeafInfo>,
    outputs: BTreeMap<String, NodeId>,
    stale: bool,
}

/// Gradients of a scalar with respect to every requires-grad leaf, by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_name.iter()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Named leaf. With `requires_grad` its gradient is reported by
    /// [`Graph::gradient`].
    pub fn input(&mut self, name: &str, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        if self.leaves.contains_key(name) {
            return Err(KaeError::Graph(format!("duplicate input name `{name}`")));
        }
        let id = self.push_leaf(value, requires_grad)?;
        self.leaves
            .insert(name.to_string(), LeafInfo { id, requires_grad });
        Ok(id)
    }

    /// Anonymous leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad: false,
        });
        id
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if !value.is_finite() {
            return Err(KaeError::NonFinite {
                op: "leaf",
                node: id.0,
            });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad: requires_grad,
        });
        Ok(id)
    }

    pub fn leaf(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).map(|l| l.id)
    }

    /// Names of leaves created with `requires_grad`.
    pub fn trainable_names(&self) -> Vec<String> {
        self.leaves
            .iter()
            .filter(|(_, l)| l.requires_grad)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Marks `id` as a named output returned by [`Graph::evaluate`].
    pub fn set_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.to_string(), id);
    }

    /// Rebinds a named leaf. The graph is stale until replayed.
    pub fn set_input(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .leaf(name)
            .ok_or_else(|| KaeError::Graph(format!("unknown input `{name}`")))?;
        if value.shape() != self.nodes[id.0].value.shape() {
            return Err(KaeError::shape(
                "set_input",
                format!(
                    "`{name}` bound with {:?}, graph built with {:?}",
                    value.shape(),
                    self.nodes[id.0].value.shape()
                ),
            ));
        }
        if !value.is_finite() {
            return Err(KaeError::NonFinite {
                op: "leaf",
                node: id.0,
            });
        }
        self.nodes[id.0].value = value;
        self.stale = true;
        Ok(())
    }

    pub(crate) fn leaf_data_mut(&mut self, id: NodeId) -> &mut [f64] {
        self.stale = true;
        self.nodes[id.0].value.data_mut()
    }

    /// Recomputes every non-leaf node in record order.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = self.compute(&self.nodes[i].op, i)?;
            self.nodes[i].value = value;
        }
        self.stale = false;
        Ok(())
    }

    /// Binds the given named inputs, replays, and returns all named outputs.
    pub fn evaluate(&mut self, inputs: &[(&str, Tensor)]) -> Result<BTreeMap<String, Tensor>> {
        for (name, t) in inputs {
            self.set_input(name, t.clone())?;
        }
        self.replay()?;
        Ok(self
            .outputs
            .iter()
            .map(|(n, id)| (n.clone(), self.value(*id).clone()))
            .collect())
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let i = self.nodes.len();
        let value = self.compute(&op, i)?;
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(NodeId(i))
    }

    // ----- builders -------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Binary(Binary::Add, a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Binary(Binary::Sub, a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Binary(Binary::Mul, a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Binary(Binary::Div, a, b))
    }

    /// Multiplies by a fixed real factor.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Tanh, a))
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Silu, a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Square, a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Sqrt, a))
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Cos, a))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Unary(Unary::Softplus, a))
    }

    /// Matrix product over the last two axes. A rank-3 operand is a batch
    /// of matrices; a rank-2 operand is shared across the batch.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(KaeError::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        // The target shape lives in the node's value; replay preserves it.
        let i = self.nodes.len();
        let value = Tensor::new(shape.to_vec(), self.value(a).data().to_vec())?;
        let needs_grad = self.nodes[a.0].needs_grad;
        self.nodes.push(Node {
            op: Op::Reshape(a),
            value,
            needs_grad,
        });
        Ok(NodeId(i))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.push(Op::Concat {
            parts: parts.to_vec(),
            axis,
        })
    }

    pub fn slice(&mut self, src: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::Slice {
            src,
            axis,
            start,
            len,
        })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, src: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::SumAxis { src, axis })
    }

    // ----- forward --------------------------------------------------------

    fn compute(&self, op: &Op, index: usize) -> Result<Tensor> {
        let out = match op {
            Op::Leaf => unreachable!("leaves are not recomputed"),
            Op::Binary(kind, a, b) => self.fwd_binary(*kind, *a, *b)?,
            Op::Scale(a, f) => self.value(*a).map(|v| v * f),
            Op::Unary(u, a) => self.value(*a).map(|v| u.apply(v)),
            Op::MatMul(a, b) => self.fwd_matmul(*a, *b)?,
            Op::Transpose(a) => transpose_last2(self.value(*a))?,
            Op::Reshape(a) => {
                // Shape was fixed when the node was built.
                let shape = self.nodes[index].value.shape().to_vec();
                Tensor::new(shape, self.value(*a).data().to_vec())?
            }
            Op::Concat { parts, axis } => self.fwd_concat(parts, *axis)?,
            Op::Slice {
                src,
                axis,
                start,
                len,
            } => self.fwd_slice(*src, *axis, *start, *len)?,
            Op::Sum(a) => Tensor::scalar(self.value(*a).data().iter().sum()),
            Op::Mean(a) => {
                let t = self.value(*a);
                Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
            }
            Op::SumAxis { src, axis } => {
                let t = self.value(*src);
                if *axis >= t.rank() {
                    return Err(KaeError::shape(
                        "sum_axis",
                        format!("axis {axis} of {:?}", t.shape()),
                    ));
                }
                let (outer, extent, inner) = split_axis(t.shape(), *axis);
                let mut data = vec![0.0; outer * inner];
                for o in 0..outer {
                    for e in 0..extent {
                        let base = (o * extent + e) * inner;
                        for i in 0..inner {
                            data[o * inner + i] += t.data()[base + i];
                        }
                    }
                }
                let mut shape = t.shape().to_vec();
                shape[*axis] = 1;
                Tensor::new(shape, data)?
            }
        };
        if !out.is_finite() {
            return Err(KaeError::NonFinite {
                op: op.name(),
                node: index,
            });
        }
        Ok(out)
    }

    fn fwd_binary(&self, kind: Binary, a: NodeId, b: NodeId) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| kind.apply(x, y))
                .collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        let shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| {
            KaeError::shape(kind.name(), format!("{:?} vs {:?}", ta.shape(), tb.shape()))
        })?;
        let ma = broadcast_map(&shape, ta.shape());
        let mb = broadcast_map(&shape, tb.shape());
        let data = ma
            .iter()
            .zip(&mb)
            .map(|(&i, &j)| kind.apply(ta.data()[i], tb.data()[j]))
            .collect();
        Tensor::new(shape, data)
    }

    fn fwd_matmul(&self, a: NodeId, b: NodeId) -> Result<Tensor> {
        let dims = MatDims::of(self.shape(a), self.shape(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; dims.batch * dims.m * dims.n];
        for bi in 0..dims.batch {
            gemm_nn(
                dims.a_slice(ta.data(), bi),
                dims.b_slice(tb.data(), bi),
                &mut out[bi * dims.m * dims.n..(bi + 1) * dims.m * dims.n],
                dims.m,
                dims.k,
                dims.n,
            );
        }
        Tensor::new(dims.out_shape(), out)
    }

    fn fwd_concat(&self, parts: &[NodeId], axis: usize) -> Result<Tensor> {
        let first = self
            .value(
                *parts
                    .first()
                    .ok_or_else(|| KaeError::Graph("concat of nothing".into()))?,
            )
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(KaeError::shape(
                "concat",
                format!("axis {axis} of {first:?}"),
            ));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(KaeError::shape("concat", format!("{s:?} vs {first:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut shape = first.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Tensor::new(shape, data)
    }

    fn fwd_slice(&self, src: NodeId, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let t = self.value(src);
        if axis >= t.rank() || start + len > t.shape()[axis] {
            return Err(KaeError::shape(
                "slice",
                format!(
                    "[{start}, {}) on axis {axis} of {:?}",
                    start + len,
                    t.shape()
                ),
            ));
        }
        let (outer, extent, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        Tensor::new(shape, data)
    }

    // ----- backward -------------------------------------------------------

    /// Reverse-mode gradient of the scalar node `loss` with respect to
    /// every requires-grad leaf. Uses of a node on several paths
    /// accumulate.
    pub fn gradient(&self, loss: NodeId) -> Result<Gradients> {
        if self.stale {
            return Err(KaeError::Graph(
                "inputs changed since the last evaluation; replay first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(KaeError::shape(
                "gradient",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        let mut by_name = BTreeMap::new();
        for (name, leaf) in &self.leaves {
            if !leaf.requires_grad {
                continue;
            }
            let shape = self.shape(leaf.id).to_vec();
            let data = grads
                .get(leaf.id.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
            by_name.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(Gradients { by_name })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let out_shape = node.value.shape();
                let same = ta.shape() == out_shape && tb.shape() == out_shape;
                let ma = (!same).then(|| broadcast_map(out_shape, ta.shape()));
                let mb = (!same).then(|| broadcast_map(out_shape, tb.shape()));
                let ia = |k: usize| ma.as_ref().map_or(k, |m| m[k]);
                let ib = |k: usize| mb.as_ref().map_or(k, |m| m[k]);
                if self.nodes[a.0].needs_grad {
                    let mut ga = vec![0.0; ta.numel()];
                    for (k, &gk) in g.iter().enumerate() {
                        let d = match kind {
                            Binary::Add | Binary::Sub => 1.0,
                            Binary::Mul => tb.data()[ib(k)],
                            Binary::Div => 1.0 / tb.data()[ib(k)],
                        };
                        ga[ia(k)] += gk * d;
                    }
                    accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; tb.numel()];
                    for (k, &gk) in g.iter().enumerate() {
                        let d = match kind {
                            Binary::Add => 1.0,
                            Binary::Sub => -1.0,
                            Binary::Mul => ta.data()[ia(k)],
                            Binary::Div => {
                                let bv = tb.data()[ib(k)];
                                -ta.data()[ia(k)] / (bv * bv)
                            }
                        };
                        gb[ib(k)] += gk * d;
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.iter().map(|v| v * f).collect()),
            Op::Unary(u, a) => {
                let x = self.value(*a).data();
                let ga = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(gk, (&xk, &yk))| gk * u.derivative(xk, yk))
                    .collect();
                accumulate(grads, *a, ga);
            }
            Op::MatMul(a, b) => {
                let dims = MatDims::of(self.shape(*a), self.shape(*b)).expect("checked in forward");
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mn = dims.m * dims.n;
                if self.nodes[a.0].needs_grad {
                    let mut ga = vec![0.0; ta.numel()];
                    for bi in 0..dims.batch {
                        let off = if dims.a_batched {
                            bi * dims.m * dims.k
                        } else {
                            0
                        };
                        gemm_nt(
                            &g[bi * mn..(bi + 1) * mn],
                            dims.b_slice(tb.data(), bi),
                            &mut ga[off..off + dims.m * dims.k],
                            dims.m,
                            dims.n,
                            dims.k,
                        );
                    }
                    accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; tb.numel()];
                    for bi in 0..dims.batch {
                        let off = if dims.b_batched {
                            bi * dims.k * dims.n
                        } else {
                            0
                        };
                        gemm_tn(
                            dims.a_slice(ta.data(), bi),
                            &g[bi * mn..(bi + 1) * mn],
                            &mut gb[off..off + dims.k * dims.n],
                            dims.k,
                            dims.m,
                            dims.n,
                        );
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())
                    .and_then(|t| transpose_last2(&t))
                    .expect("shape fixed by forward");
                accumulate(grads, *a, gt.into_data());
            }
            Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let extent = self.shape(*p)[*axis];
                    if self.nodes[p.0].needs_grad {
                        let mut gp = Vec::with_capacity(outer * extent * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + extent * inner]);
                        }
                        accumulate(grads, *p, gp);
                    }
                    offset += extent;
                }
            }
            Op::Slice {
                src,
                axis,
                start,
                len,
            } => {
                let (outer, extent, inner) = split_axis(self.shape(*src), *axis);
                let mut gs = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let srcp = o * len * inner;
                    gs[dst..dst + len * inner].copy_from_slice(&g[srcp..srcp + len * inner]);
                }
                accumulate(grads, *src, gs);
            }
            Op::Sum(a) => accumulate(grads, *a, vec![g[0]; self.value(*a).numel()]),
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::SumAxis { src, axis } => {
                let (outer, extent, inner) = split_axis(self.shape(*src), *axis);
                let mut gs = vec![0.0; outer * extent * inner];
                for o in 0..outer {
                    for e in 0..extent {
                        let base = (o * extent + e) * inner;
                        gs[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                accumulate(grads, *src, gs);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn transpose_last2(t: &Tensor) -> Result<Tensor> {
    let r = t.rank();
    if r < 2 {
        return Err(KaeError::shape("transpose", format!("rank {r}")));
    }
    let (rows, cols) = (t.shape()[r - 2], t.shape()[r - 1]);
    let batch = t.numel() / (rows * cols).max(1);
    let mut data = vec![0.0; t.numel()];
    for b in 0..batch {
        let off = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                data[off + j * rows + i] = t.data()[off + i * cols + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::new(shape, data)
}

#[derive(Debug, Clone, Copy)]
struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_batched: bool,
    b_batched: bool,
}

impl MatDims {
    fn of(a: &[usize], b: &[usize]) -> Result<Self> {
        let err = || KaeError::shape("matmul", format!("{a:?} x {b:?}"));
        let (ab, m, ka) = match a {
            [m, k] => (None, *m, *k),
            [bt, m, k] => (Some(*bt), *m, *k),
            _ => return Err(err()),
        };
        let (bb, kb, n) = match b {
            [k, n] => (None, *k, *n),
            [bt, k, n] => (Some(*bt), *k, *n),
            _ => return Err(err()),
        };
        if ka != kb {
            return Err(err());
        }
        let batch = match (ab, bb) {
            (Some(x), Some(y)) if x != y => return Err(err()),
            (Some(x), _) | (None, Some(x)) => x,
            (None, None) => 1,
        };
        Ok(Self {
            batch,
            m,
            k: ka,
            n,
            a_batched: ab.is_some(),
            b_batched: bb.is_some(),
        })
    }

    fn a_slice<'a>(&self, a: &'a [f64], bi: usize) -> &'a [f64] {
        let sz = self.m * self.k;
        if self.a_batched {
            &a[bi * sz..(bi + 1) * sz]
        } else {
            a
        }
    }

    fn b_slice<'a>(&self, b: &'a [f64], bi: usize) -> &'a [f64] {
        let sz = self.k * self.n;
        if self.b_batched {
            &b[bi * sz..(bi + 1) * sz]
        } else {
            b
        }
    }

    fn out_shape(&self) -> Vec<usize> {
        if self.a_batched || self.b_batched {
            vec![self.batch, self.m, self.n]
        } else {
            vec![self.m, self.n]
        }
    }
}

/// Test-only hook that corrupts one backward rule, used to prove that the
/// gradient checks actually catch a broken derivative.
#[cfg(test)]
pub(crate) mod fault {
    use super::Unary;
    use std::cell::Cell;

    thread_local! {
        static CORRUPT: Cell<Option<Unary>> = const { Cell::new(None) };
    }

    pub(crate) fn corrupt(op: Option<Unary>) {
        CORRUPT.with(|c| c.set(op));
    }

    pub(super) fn perturb(op: Unary, d: f64) -> f64 {
        match CORRUPT.with(Cell::get) {
            Some(bad) if bad == op => d * 1.1,
            _ => d,
        }
    }
}
