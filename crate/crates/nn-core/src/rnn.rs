//! LSTM and GRU cells as graph builders.
//!
//! A cell owns its parameter names (under a prefix) and knows how to build
//! one step of its recurrence on a graph. Weights are registered once per
//! model; steps can be applied to any graph binding of that model.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{fan_in_bound, init_uniform, BoundParams, ParamSet};
use crate::tensor::Tensor;

fn gate_names(prefix: &str, gate: &str) -> (String, String, String) {
    (
        format!("{prefix}.w_{gate}"),
        format!("{prefix}.u_{gate}"),
        format!("{prefix}.b_{gate}"),
    )
}

fn register_gate(
    params: &mut ParamSet,
    prefix: &str,
    gate: &str,
    input_dim: usize,
    hidden_dim: usize,
    rng: &mut ChaCha8Rng,
) {
    let (w, u, b) = gate_names(prefix, gate);
    let bound = fan_in_bound(input_dim + hidden_dim);
    params.insert(w, init_uniform(&[hidden_dim, input_dim], bound, rng), true);
    params.insert(u, init_uniform(&[hidden_dim, hidden_dim], bound, rng), true);
    params.insert(b, Tensor::zeros(&[hidden_dim]), true);
}

/// Pre-activation `W x + U h + b` for one gate.
fn gate_preact(
    graph: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    gate: &str,
    x: NodeId,
    h: NodeId,
) -> Result<NodeId> {
    let (w, u, b) = gate_names(prefix, gate);
    let wx = graph.matvec(bound.node(&w)?, x)?;
    let uh = graph.matvec(bound.node(&u)?, h)?;
    let s = graph.add(wx, uh)?;
    graph.add(s, bound.node(&b)?)
}

/// Standard LSTM cell: input, forget, cell, and output gates.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        }
    }

    pub fn register(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        for gate in ["i", "f", "g", "o"] {
            register_gate(params, &self.prefix, gate, self.input_dim, self.hidden_dim, rng);
        }
    }

    pub fn zero_state(&self, graph: &mut Graph) -> (NodeId, NodeId) {
        let h = graph.constant(Tensor::zeros(&[self.hidden_dim]));
        let c = graph.constant(Tensor::zeros(&[self.hidden_dim]));
        (h, c)
    }

    /// One step: `(x, h, c) -> (h', c')`.
    pub fn step(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let pre_i = gate_preact(graph, bound, &self.prefix, "i", x, h)?;
        let pre_f = gate_preact(graph, bound, &self.prefix, "f", x, h)?;
        let pre_g = gate_preact(graph, bound, &self.prefix, "g", x, h)?;
        let pre_o = gate_preact(graph, bound, &self.prefix, "o", x, h)?;
        let i = graph.sigmoid(pre_i);
        let f = graph.sigmoid(pre_f);
        let g_ = graph.tanh(pre_g);
        let o = graph.sigmoid(pre_o);
        let fc = graph.mul(f, c)?;
        let ig = graph.mul(i, g_)?;
        let c_new = graph.add(fc, ig)?;
        let c_tanh = graph.tanh(c_new);
        let h_new = graph.mul(o, c_tanh)?;
        Ok((h_new, c_new))
    }

    /// Run the whole sequence from zero state; returns the final hidden state.
    pub fn encode(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        let (mut h, mut c) = self.zero_state(graph);
        for &x in inputs {
            let (h2, c2) = self.step(graph, bound, x, h, c)?;
            h = h2;
            c = c2;
        }
        Ok(h)
    }
}

/// Standard GRU cell: update and reset gates, candidate state
/// `n = tanh(W_n x + b_n + r .* (U_n h))`, `h' = (1 - z) .* n + z .* h`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        }
    }

    pub fn register(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        for gate in ["z", "r", "n"] {
            register_gate(params, &self.prefix, gate, self.input_dim, self.hidden_dim, rng);
        }
    }

    pub fn zero_state(&self, graph: &mut Graph) -> NodeId {
        graph.constant(Tensor::zeros(&[self.hidden_dim]))
    }

    /// One step: `(x, h) -> h'`.
    pub fn step(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        let pre_z = gate_preact(graph, bound, &self.prefix, "z", x, h)?;
        let pre_r = gate_preact(graph, bound, &self.prefix, "r", x, h)?;
        let z = graph.sigmoid(pre_z);
        let r = graph.sigmoid(pre_r);

        let (wn, un, bn) = gate_names(&self.prefix, "n");
        let wx = graph.matvec(bound.node(&wn)?, x)?;
        let wxb = graph.add(wx, bound.node(&bn)?)?;
        let uh = graph.matvec(bound.node(&un)?, h)?;
        let ruh = graph.mul(r, uh)?;
        let pre_n = graph.add(wxb, ruh)?;
        let n = graph.tanh(pre_n);

        // h' = (1 - z) .* n + z .* h  =  n - z .* n + z .* h
        let zn = graph.mul(z, n)?;
        let zh = graph.mul(z, h)?;
        let n_minus_zn = graph.sub(n, zn)?;
        graph.add(n_minus_zn, zh)
    }

    pub fn encode(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        inputs: &[NodeId],
    ) -> Result<NodeId> {
        let mut h = self.zero_state(graph);
        for &x in inputs {
            h = self.step(graph, bound, x, h)?;
        }
        Ok(h)
    }
}
