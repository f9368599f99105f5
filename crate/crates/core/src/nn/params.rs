//! Named parameter storage.
//!
//! Names follow `<net>.<block>.<kind>`: `g.enc1.w`, `g.dec3.gamma`,
//! `d.block2.b`, `d.out.w`. Kinds are `w` (conv weight), `b` (bias),
//! `gamma` and `beta` (batch-norm affine). Iteration is lexicographic.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S: Scalar = f32> {
    params: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Union of two stores with disjoint names.
    pub fn merged(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        for (k, v) in other.iter() {
            out.insert(k, v.clone())?;
        }
        Ok(out)
    }

    /// Parameters whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        Self {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Registers every parameter as a graph leaf. `trainable` leaves receive
    /// gradients; otherwise they are constants.
    pub fn bind(&self, graph: &mut Graph<S>, trainable: bool) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|(k, v)| {
                let id = if trainable {
                    graph.param(v.clone())
                } else {
                    graph.constant(v.clone())
                };
                (k.clone(), id)
            })
            .collect();
        Bound { ids }
    }

    /// Collects gradients for every bound parameter after a backward pass.
    pub fn grads_from(&self, graph: &mut Graph<S>, bound: &Bound) -> Result<ParamStore<S>> {
        let mut out = ParamStore::new();
        for name in self.params.keys() {
            let id = bound.get(name)?;
            let g = graph
                .take_grad(id)
                .ok_or_else(|| Error::MissingGradient(name.clone()))?;
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }
}

/// Graph node ids of a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }
}

/// Draws fresh values for every parameter in lexicographic order: weights
/// from N(0, 0.02), norm scales from N(1, 0.02), biases and shifts zero.
pub fn init_params(store: &mut ParamStore<f32>, rng: &mut RngState) {
    for (name, t) in store.iter_mut() {
        let kind = name.rsplit('.').next().unwrap_or_default();
        match kind {
            "w" => t
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.normal(0.0, 0.02) as f32),
            "gamma" => t
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.normal(1.0, 0.02) as f32),
            _ => t.data_mut().fill(0.0),
        }
    }
}
