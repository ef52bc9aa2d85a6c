//! Named parameter storage and tape binding.

use std::collections::HashMap;

use super::mat::Mat;
use super::tape::{NodeId, Tape};
use crate::rng::Rng;

/// Ordered, uniquely named parameter tensors. The order is the serialization
/// order, so checkpoints and optimizer state stay aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Mat)>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Mat) {
        let name = name.into();
        assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter {name}"
        );
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> &Mat {
        &self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mat)> {
        self.entries.iter_mut().map(|(n, m)| (n.as_str(), m))
    }

    /// Total scalar count across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    /// Insert every parameter as a tape leaf, in order.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut ids = HashMap::with_capacity(self.entries.len());
        let mut order = Vec::with_capacity(self.entries.len());
        for (name, value) in &self.entries {
            let id = tape.leaf(value.clone());
            ids.insert(name.clone(), id);
            order.push(id);
        }
        BoundParams { ids, order }
    }

    /// Gradients for every parameter, aligned with entry order.
    pub fn collect_grads(&self, tape: &Tape, bound: &BoundParams) -> Vec<Mat> {
        bound.order.iter().map(|&id| tape.grad(id)).collect()
    }
}

/// Tape node ids of one bound parameter set.
pub struct BoundParams {
    ids: HashMap<String, NodeId>,
    order: Vec<NodeId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }
}

/// Glorot-uniform initialization for a weight matrix.
pub fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.uniform(-limit, limit))
        .collect();
    Mat::from_vec(fan_in, fan_out, data)
}
