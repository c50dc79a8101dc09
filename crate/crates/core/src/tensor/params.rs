use std::collections::BTreeMap;

use super::{Gradients, Tensor};

/// Named learnable tensors. Iteration order is the lexical order of names,
/// which keeps optimizer updates and archives deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor.requires_grad(true));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
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
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn has_any_grad(&self) -> bool {
        self.tensors.values().any(|t| t.grad().is_some())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Adds every parameter gradient found in `grads` to the matching
    /// accumulator. Names absent from this set are ignored.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (name, g) in grads.params() {
            if let Some(t) = self.tensors.get_mut(name) {
                t.accumulate_grad(g);
            }
        }
    }

    /// Every parameter multiplied by `factor`. Used to build zero-weight
    /// variants in tests.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in out.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
        out
    }
}
