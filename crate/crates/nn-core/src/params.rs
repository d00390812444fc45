//! Named parameter sets with freeze flags.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// A named tensor with a trainable flag. Frozen parameters never change
/// under optimizer steps and accumulate no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of parameters, keyed by stable names. Name prefixes
/// (`"gftm."`, `"s2d."`, ...) group parameters into subsystems.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    map: BTreeMap<String, Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        let name = name.into();
        assert!(
            self.map
                .insert(name.clone(), Parameter { value, trainable })
                .is_none(),
            "duplicate parameter {}",
            name
        );
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.map
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.map
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Set the trainable flag on every parameter whose name starts with
    /// `prefix` (empty prefix = all). Returns how many were touched.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.map.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
                n += 1;
            }
        }
        n
    }

    /// Remove all parameters under a prefix, returning them.
    pub fn remove_prefix(&mut self, prefix: &str) -> Vec<(String, Parameter)> {
        let keys: Vec<String> = self
            .map
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        keys.into_iter()
            .map(|k| {
                let p = self.map.remove(&k).unwrap();
                (k, p)
            })
            .collect()
    }

    /// Merge another set under this one; names must not collide.
    pub fn absorb(&mut self, other: ParamSet) {
        for (name, p) in other.map {
            assert!(
                self.map.insert(name.clone(), p).is_none(),
                "duplicate parameter {}",
                name
            );
        }
    }

    /// SHA-256 over names, shapes, flags, and raw f64 bits of every
    /// parameter whose name starts with `prefix`, in name order.
    pub fn digest(&self, prefix: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, p) in &self.map {
            if !name.starts_with(prefix) {
                continue;
            }
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update([u8::from(p.trainable)]);
            for &d in p.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Insert every parameter into a graph: variables when trainable,
    /// constants when frozen.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let mut nodes = BTreeMap::new();
        for (name, p) in &self.map {
            let id = if p.trainable {
                graph.var(p.value.clone())
            } else {
                graph.constant(p.value.clone())
            };
            nodes.insert(name.clone(), id);
        }
        BoundParams { nodes }
    }

    /// Insert every parameter as a constant: inference-only binding, no
    /// gradient bookkeeping anywhere in the graph.
    pub fn bind_const(&self, graph: &mut Graph) -> BoundParams {
        let mut nodes = BTreeMap::new();
        for (name, p) in &self.map {
            nodes.insert(name.clone(), graph.constant(p.value.clone()));
        }
        BoundParams { nodes }
    }
}

/// Node handles for one graph's view of a parameter set.
pub struct BoundParams {
    nodes: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Pull this graph's gradients for every trainable parameter into a
    /// gradient store, accumulating with `scale` (use `1/batch` to average).
    pub fn accumulate_grads(
        &self,
        graph: &Graph,
        node_grads: &[Option<Tensor>],
        store: &mut GradStore,
        scale: f64,
    ) {
        for (name, id) in &self.nodes {
            if !graph.requires_grad(*id) {
                continue;
            }
            if let Some(g) = &node_grads[id.0] {
                store.add(name, g, scale);
            }
        }
    }
}

/// Accumulated gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStore {
    map: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, grad: &Tensor, scale: f64) {
        match self.map.get_mut(name) {
            Some(t) => t.add_scaled(grad, scale),
            None => {
                let mut t = Tensor::zeros_like(grad);
                t.add_scaled(grad, scale);
                self.map.insert(name.to_string(), t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise merge of another store into this one.
    pub fn merge(&mut self, other: &GradStore) {
        for (name, g) in &other.map {
            self.add(name, g, 1.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(Tensor::all_finite)
    }
}

/// Uniform init in `[-bound, bound]`.
pub fn init_uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// The conventional `1/sqrt(fan_in)` bound.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_any_bit_change() {
        let mut p = ParamSet::new();
        p.insert("a.w", Tensor::vector(vec![1.0, 2.0]), true);
        p.insert("b.w", Tensor::vector(vec![3.0]), false);
        let d0 = p.digest("");
        let d_a = p.digest("a.");
        p.get_mut("a.w").unwrap().value.data_mut()[0] = 1.0 + f64::EPSILON;
        assert_ne!(p.digest(""), d0);
        assert_ne!(p.digest("a."), d_a);
        // b untouched.
        let d_b0 = {
            let mut q = ParamSet::new();
            q.insert("b.w", Tensor::vector(vec![3.0]), false);
            q.digest("b.")
        };
        assert_eq!(p.digest("b."), d_b0);
    }

    #[test]
    fn bind_marks_frozen_params_as_constants() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![2.0]), true);
        p.insert("frozen", Tensor::vector(vec![5.0]), false);
        let mut g = Graph::new();
        let bound = p.bind(&mut g);
        let w = bound.node("w").unwrap();
        let f = bound.node("frozen").unwrap();
        let prod = g.mul(w, f).unwrap();
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        let mut store = GradStore::new();
        bound.accumulate_grads(&g, &grads, &mut store, 1.0);
        assert_eq!(store.get("w").unwrap().data(), &[5.0]);
        assert!(store.get("frozen").is_none());
    }
}
