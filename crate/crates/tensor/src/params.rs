use indexmap::IndexMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Named model parameters in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a parameter.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t.with_requires_grad(true));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    /// Like [`get`](Self::get) but fails with [`TensorError::UnknownParam`].
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total scalar count across all parameters.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Copy every parameter of `other` whose name starts with `prefix` into `self`.
    pub fn extend_prefixed(&mut self, other: &ParamStore, prefix: &str) {
        for (k, v) in other.iter() {
            if k.starts_with(prefix) {
                self.insert(k, v.clone());
            }
        }
    }
}

/// Parameter gradients keyed by name.
#[derive(Clone, Debug, Default)]
pub struct GradMap {
    grads: IndexMap<String, Tensor>,
}

impl GradMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor) {
        self.grads.insert(name.into(), g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Accumulate `other` into `self` (sums matching names, inserts new ones).
    pub fn accumulate(&mut self, other: GradMap) -> Result<()> {
        for (k, g) in other.grads {
            match self.grads.get_mut(&k) {
                Some(dst) => {
                    if dst.shape() != g.shape() {
                        return Err(TensorError::mismatch("accumulate", dst.shape(), g.shape()));
                    }
                    for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                None => {
                    self.grads.insert(k, g);
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f32) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// L2 norm over all gradient entries.
    pub fn global_norm(&self) -> f32 {
        self.grads
            .values()
            .flat_map(|g| g.data())
            .map(|&v| (v as f64).powi(2))
            .sum::<f64>()
            .sqrt() as f32
    }

    /// Rescale so the global norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f32) -> f32 {
        let norm = self.global_norm();
        if norm.is_finite() && norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}
