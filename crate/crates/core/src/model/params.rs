use std::collections::BTreeMap;

use crate::autodiff::{Graph, NodeId};
use crate::error::{KaeError, Result};
use crate::tensor::Tensor;

/// Anything that owns named trainable tensors.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_params(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        self.visit(&mut |n, t| {
            out.insert(n.to_string(), t.clone());
        });
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Overwrites every parameter from `values`; all names and shapes must
    /// match.
    fn load_params(&mut self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut err = None;
        self.visit_mut(&mut |n, t| {
            if err.is_some() {
                return;
            }
            match values.get(n) {
                Some(v) if v.shape() == t.shape() => *t = v.clone(),
                Some(v) => {
                    err = Some(KaeError::Format(format!(
                        "parameter `{n}` has shape {:?}, expected {:?}",
                        v.shape(),
                        t.shape()
                    )))
                }
                None => err = Some(KaeError::Format(format!("missing parameter `{n}`"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Adds every parameter to `g` as a named leaf.
    fn bind(&self, g: &mut Graph, requires_grad: bool) -> Result<Bindings> {
        let mut ids = BTreeMap::new();
        let mut err = None;
        self.visit(&mut |n, t| {
            if err.is_none() {
                match g.input(n, t.clone(), requires_grad) {
                    Ok(id) => {
                        ids.insert(n.to_string(), id);
                    }
                    Err(e) => err = Some(e),
                }
            }
        });
        err.map_or(Ok(Bindings { ids }), Err)
    }
}

/// Parameter name → graph node.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    ids: BTreeMap<String, NodeId>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| KaeError::Graph(format!("parameter `{name}` is not bound")))
    }
}
