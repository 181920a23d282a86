use std::collections::BTreeMap;

use super::graph::{Gradients, Graph, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

/// Graph handles for a [`ParamSet`] bound into one [`Graph`].
#[derive(Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unbound parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Points `name` at another graph value, e.g. a perturbed copy.
    pub fn set(&mut self, name: &str, var: Var) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = var;
                Ok(())
            }
            None => Err(Error::InvalidArgument(format!("unbound parameter `{name}`"))),
        }
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Registers every tensor as a leaf of `graph`; tracked when `trainable`.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Collects the gradient of every bound parameter. Parameters that did not
    /// influence the loss receive zeros.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients) -> ParamSet {
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let g = bound
                    .vars
                    .get(name)
                    .and_then(|&v| grads.take(v))
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
                (name.clone(), g)
            })
            .collect();
        ParamSet { tensors }
    }

    /// `self += factor * other`, matched by name.
    pub fn add_scaled(&mut self, other: &ParamSet, factor: f64) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            let o = other.require(name)?;
            if o.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "add_scaled",
                    left: t.shape().to_vec(),
                    right: o.shape().to_vec(),
                });
            }
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += factor * b;
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape().to_vec())))
            .collect();
        ParamSet { tensors }
    }
}
