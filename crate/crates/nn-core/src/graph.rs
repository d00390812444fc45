//! Define-by-run computation tape with reverse-mode gradients.
//!
//! Nodes are appended in execution order, so reverse index order is a valid
//! topological order for the backward sweep. Leaves are either constants
//! (no gradient tracked) or variables; a node requires a gradient iff any
//! parent does, and backward never visits subgraphs that do not.

use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatVec(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Row(NodeId, usize),
    SoftmaxRows(NodeId),
    MeanRows(NodeId),
    MaxRows { input: NodeId, argmax: Vec<usize> },
    AddRowBroadcast(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    Huber { pred: NodeId, target: Tensor, delta: f64 },
    GaussianNll { mean: NodeId, logvar: NodeId, target: Tensor },
    ThresholdSte { p: NodeId },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward pass. Build ops, call [`Graph::backward`] on a scalar
/// loss, then read gradients per node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Insert a constant leaf: no gradient is ever tracked through it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Insert a differentiable leaf.
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, Op::Scale(a, c), rg)
    }

    /// `W (m,n) * x (n) -> (m)`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, xv) = (self.value(w), self.value(x));
        if wv.rank() != 2 || xv.rank() != 1 || wv.cols() != xv.len() {
            return Err(shape_err(
                "matvec",
                format!("{:?} x {:?}", wv.shape(), xv.shape()),
            ));
        }
        let (m, n) = (wv.rows(), wv.cols());
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wv.data()[i * n..(i + 1) * n];
            out[i] = row.iter().zip(xv.data()).map(|(a, b)| a * b).sum();
        }
        let rg = self.any_grad(&[w, x]);
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), rg))
    }

    /// `A (m,k) * B (k,n) -> (m,n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                let aik = av.data()[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv.data()[kk * n..(kk + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(shape_err("transpose", format!("{:?}", av.shape())));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av.data()[i * n + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Tensor::matrix(n, m, out), Op::Transpose(a), rg))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, Op::Tanh(a), rg)
    }

    /// Concatenate rank-1 tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NnError::EmptyInput("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 1 {
                return Err(shape_err("concat", format!("{:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), rg))
    }

    /// Stack `k` equal-length vectors into a `(k, n)` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(NnError::EmptyInput("stack_rows"));
        }
        let n = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != n {
                return Err(shape_err("stack_rows", format!("{:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
        }
        let rg = self.any_grad(rows);
        Ok(self.push(
            Tensor::matrix(rows.len(), n, data),
            Op::StackRows(rows.to_vec()),
            rg,
        ))
    }

    /// Extract row `i` of a matrix as a vector.
    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let av = self.value(a);
        if av.rank() != 2 || i >= av.rows() {
            return Err(shape_err("row", format!("{:?} row {}", av.shape(), i)));
        }
        let n = av.cols();
        let data = av.data()[i * n..(i + 1) * n].to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Tensor::vector(data), Op::Row(a, i), rg))
    }

    /// Row-wise softmax. A rank-1 input is treated as a single row.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let (rows, cols) = match av.rank() {
            1 => (1, av.len()),
            2 => (av.rows(), av.cols()),
            _ => return Err(shape_err("softmax", format!("{:?}", av.shape()))),
        };
        if cols == 0 {
            return Err(NnError::EmptyInput("softmax"));
        }
        let mut data = av.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data);
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    /// Mean over rows of a `(m, n)` matrix -> `(n)`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rank() != 2 || av.rows() == 0 {
            return Err(shape_err("mean_rows", format!("{:?}", av.shape())));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += av.data()[i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Tensor::vector(out), Op::MeanRows(a), rg))
    }

    /// Columnwise max over rows of a `(m, n)` matrix -> `(n)`. Gradient is
    /// routed to the argmax row; ties go to the lowest row index.
    pub fn max_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if av.rank() != 2 || av.rows() == 0 {
            return Err(shape_err("max_rows", format!("{:?}", av.shape())));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = vec![f64::NEG_INFINITY; n];
        let mut argmax = vec![0usize; n];
        for i in 0..m {
            for j in 0..n {
                let v = av.data()[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(
            Tensor::vector(out),
            Op::MaxRows { input: a, argmax },
            rg,
        ))
    }

    /// `(m, n) + (n)`, the vector broadcast over every row.
    pub fn add_row_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 1 || av.cols() != bv.len() {
            return Err(shape_err(
                "add_row_broadcast",
                format!("{:?} + {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut data = av.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bv.data()[j];
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::matrix(m, n, data),
            Op::AddRowBroadcast(a, b),
            rg,
        ))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.push(Tensor::scalar(s), Op::MeanAll(a), rg)
    }

    /// Mean Huber loss against a constant target.
    pub fn huber_loss(&mut self, pred: NodeId, target: &Tensor, delta: f64) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(shape_err(
                "huber",
                format!("{:?} vs {:?}", pv.shape(), target.shape()),
            ));
        }
        if delta <= 0.0 {
            return Err(shape_err("huber", format!("delta {} <= 0", delta)));
        }
        let n = pv.len() as f64;
        let mut acc = 0.0;
        for (p, t) in pv.data().iter().zip(target.data()) {
            let e = p - t;
            acc += if e.abs() <= delta {
                0.5 * e * e
            } else {
                delta * (e.abs() - 0.5 * delta)
            };
        }
        let rg = self.nodes[pred.0].requires_grad;
        Ok(self.push(
            Tensor::scalar(acc / n),
            Op::Huber {
                pred,
                target: target.clone(),
                delta,
            },
            rg,
        ))
    }

    /// Mean single-mode Gaussian negative log-likelihood against a constant
    /// target: `0.5 * (logvar + (t - mu)^2 * exp(-logvar) + ln(2 pi))`.
    pub fn gaussian_nll(
        &mut self,
        mean: NodeId,
        logvar: NodeId,
        target: &Tensor,
    ) -> Result<NodeId> {
        let (mv, lv) = (self.value(mean), self.value(logvar));
        if mv.shape() != lv.shape() || mv.shape() != target.shape() {
            return Err(shape_err(
                "gaussian_nll",
                format!("{:?} / {:?} vs {:?}", mv.shape(), lv.shape(), target.shape()),
            ));
        }
        let n = mv.len() as f64;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut acc = 0.0;
        for ((m, l), t) in mv.data().iter().zip(lv.data()).zip(target.data()) {
            let r = t - m;
            acc += 0.5 * (l + r * r * (-l).exp() + ln2pi);
        }
        let rg = self.any_grad(&[mean, logvar]);
        Ok(self.push(
            Tensor::scalar(acc / n),
            Op::GaussianNll {
                mean,
                logvar,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Hard threshold `[p > eps]` with a straight-through gradient: the
    /// forward value is binary, the backward pass treats the op as identity.
    pub fn threshold_ste(&mut self, p: NodeId, eps: f64) -> NodeId {
        let data = self
            .value(p)
            .data()
            .iter()
            .map(|&x| if x > eps { 1.0 } else { 0.0 })
            .collect();
        let value = Tensor::new(self.value(p).shape().to_vec(), data);
        let rg = self.nodes[p.0].requires_grad;
        self.push(value, Op::ThresholdSte { p }, rg)
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients; nodes
    /// that do not require a gradient stay `None`.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        if self.value(loss).len() != 1 {
            return Err(NnError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(grads);
        }
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![1.0],
        ));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    fn add_grad(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => g.add_scaled(&delta, 1.0),
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate_parents(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(grads, *a, g.clone());
                self.add_grad(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.add_grad(grads, *a, g.clone());
                let mut neg = g.clone();
                for v in neg.data_mut() {
                    *v = -*v;
                }
                self.add_grad(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let data = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    self.add_grad(grads, *a, Tensor::new(av.shape().to_vec(), data));
                }
                if self.nodes[b.0].requires_grad {
                    let data = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    self.add_grad(grads, *b, Tensor::new(bv.shape().to_vec(), data));
                }
            }
            Op::Scale(a, c) => {
                let data = g.data().iter().map(|x| x * c).collect();
                self.add_grad(grads, *a, Tensor::new(g.shape().to_vec(), data));
            }
            Op::MatVec(w, x) => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                let (m, n) = (wv.rows(), wv.cols());
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![0.0; m * n];
                    for i in 0..m {
                        let gi = g.data()[i];
                        if gi != 0.0 {
                            for j in 0..n {
                                gw[i * n + j] = gi * xv.data()[j];
                            }
                        }
                    }
                    self.add_grad(grads, *w, Tensor::matrix(m, n, gw));
                }
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![0.0; n];
                    for i in 0..m {
                        let gi = g.data()[i];
                        if gi != 0.0 {
                            for j in 0..n {
                                gx[j] += gi * wv.data()[i * n + j];
                            }
                        }
                    }
                    self.add_grad(grads, *x, Tensor::vector(gx));
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.nodes[a.0].requires_grad {
                    // gA = g * B^T
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g.data()[i * n + j] * bv.data()[kk * n + j];
                            }
                            ga[i * k + kk] = s;
                        }
                    }
                    self.add_grad(grads, *a, Tensor::matrix(m, k, ga));
                }
                if self.nodes[b.0].requires_grad {
                    // gB = A^T * g
                    let mut gb = vec![0.0; k * n];
                    for kk in 0..k {
                        for i in 0..m {
                            let aik = av.data()[i * k + kk];
                            if aik != 0.0 {
                                for j in 0..n {
                                    gb[kk * n + j] += aik * g.data()[i * n + j];
                                }
                            }
                        }
                    }
                    self.add_grad(grads, *b, Tensor::matrix(k, n, gb));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (g.rows(), g.cols());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[j * m + i] = g.data()[i * n + j];
                    }
                }
                self.add_grad(grads, *a, Tensor::matrix(n, m, out));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gi, s)| gi * s * (1.0 - s))
                    .collect();
                self.add_grad(grads, *a, Tensor::new(y.shape().to_vec(), data));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(gi, t)| gi * (1.0 - t * t))
                    .collect();
                self.add_grad(grads, *a, Tensor::new(y.shape().to_vec(), data));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.nodes[p.0].requires_grad {
                        let slice = g.data()[offset..offset + len].to_vec();
                        self.add_grad(grads, p, Tensor::vector(slice));
                    }
                    offset += len;
                }
            }
            Op::StackRows(rows) => {
                let n = g.cols();
                for (i, &r) in rows.iter().enumerate() {
                    if self.nodes[r.0].requires_grad {
                        let slice = g.data()[i * n..(i + 1) * n].to_vec();
                        self.add_grad(grads, r, Tensor::vector(slice));
                    }
                }
            }
            Op::Row(a, i) => {
                let av = self.value(*a);
                let mut out = Tensor::zeros_like(av);
                let n = av.cols();
                out.data_mut()[i * n..(i + 1) * n].copy_from_slice(g.data());
                self.add_grad(grads, *a, out);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].value;
                let (rows, cols) = match y.rank() {
                    1 => (1, y.len()),
                    _ => (y.rows(), y.cols()),
                };
                let mut out = vec![0.0; y.len()];
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        out[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.add_grad(grads, *a, Tensor::new(y.shape().to_vec(), out));
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let (m, n) = (av.rows(), av.cols());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = g.data()[j] / m as f64;
                    }
                }
                self.add_grad(grads, *a, Tensor::matrix(m, n, out));
            }
            Op::MaxRows { input, argmax } => {
                let av = self.value(*input);
                let (m, n) = (av.rows(), av.cols());
                let mut out = vec![0.0; m * n];
                for (j, &i) in argmax.iter().enumerate() {
                    out[i * n + j] = g.data()[j];
                }
                self.add_grad(grads, *input, Tensor::matrix(m, n, out));
            }
            Op::AddRowBroadcast(a, b) => {
                if self.nodes[a.0].requires_grad {
                    self.add_grad(grads, *a, g.clone());
                }
                if self.nodes[b.0].requires_grad {
                    let (m, n) = (g.rows(), g.cols());
                    let mut gb = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += g.data()[i * n + j];
                        }
                    }
                    self.add_grad(grads, *b, Tensor::vector(gb));
                }
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                let gi = g.item();
                self.add_grad(
                    grads,
                    *a,
                    Tensor::new(av.shape().to_vec(), vec![gi; av.len()]),
                );
            }
            Op::MeanAll(a) => {
                let av = self.value(*a);
                let gi = g.item() / av.len() as f64;
                self.add_grad(
                    grads,
                    *a,
                    Tensor::new(av.shape().to_vec(), vec![gi; av.len()]),
                );
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let pv = self.value(*pred);
                let n = pv.len() as f64;
                let gi = g.item();
                let data = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| {
                        let e = p - t;
                        let d = if e.abs() <= *delta {
                            e
                        } else {
                            delta * e.signum()
                        };
                        gi * d / n
                    })
                    .collect();
                self.add_grad(grads, *pred, Tensor::new(pv.shape().to_vec(), data));
            }
            Op::GaussianNll {
                mean,
                logvar,
                target,
            } => {
                let (mv, lv) = (self.value(*mean), self.value(*logvar));
                let n = mv.len() as f64;
                let gi = g.item();
                if self.nodes[mean.0].requires_grad {
                    let data = mv
                        .data()
                        .iter()
                        .zip(lv.data())
                        .zip(target.data())
                        .map(|((m, l), t)| gi * (m - t) * (-l).exp() / n)
                        .collect();
                    self.add_grad(grads, *mean, Tensor::new(mv.shape().to_vec(), data));
                }
                if self.nodes[logvar.0].requires_grad {
                    let data = mv
                        .data()
                        .iter()
                        .zip(lv.data())
                        .zip(target.data())
                        .map(|((m, l), t)| {
                            let r = t - m;
                            gi * 0.5 * (1.0 - r * r * (-l).exp()) / n
                        })
                        .collect();
                    self.add_grad(grads, *logvar, Tensor::new(lv.shape().to_vec(), data));
                }
            }
            Op::ThresholdSte { p } => {
                self.add_grad(grads, *p, g.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear_returns_input() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::matrix(3, 3, vec![
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ]));
        let x = g.constant(Tensor::vector(vec![0.3, -1.2, 7.0]));
        let b = g.constant(Tensor::vector(vec![0.0; 3]));
        let wx = g.matvec(w, x).unwrap();
        let y = g.add(wx, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.3, -1.2, 7.0]);
    }

    #[test]
    fn huber_branch_values() {
        let mut g = Graph::new();
        // pred == target -> 0
        let p = g.var(Tensor::vector(vec![1.0, 2.0]));
        let l = g.huber_loss(p, &Tensor::vector(vec![1.0, 2.0]), 1.0).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        // quadratic branch: e = 0.5, delta = 1 -> 0.125
        let p = g.var(Tensor::vector(vec![0.5]));
        let l = g.huber_loss(p, &Tensor::vector(vec![0.0]), 1.0).unwrap();
        assert!((g.value(l).item() - 0.125).abs() < 1e-15);
        // linear branch: e = 2, delta = 1 -> 1.5
        let p = g.var(Tensor::vector(vec![2.0]));
        let l = g.huber_loss(p, &Tensor::vector(vec![0.0]), 1.0).unwrap();
        assert!((g.value(l).item() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_nll_closed_forms() {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let mut g = Graph::new();
        // mean == target, logvar = 0 -> 0.5 ln(2 pi)
        let m = g.var(Tensor::vector(vec![3.0]));
        let lv = g.var(Tensor::vector(vec![0.0]));
        let l = g.gaussian_nll(m, lv, &Tensor::vector(vec![3.0])).unwrap();
        assert!((g.value(l).item() - 0.5 * ln2pi).abs() < 1e-12);
        // residual 1, logvar 0 -> 0.5 (1 + ln(2 pi))
        let m = g.var(Tensor::vector(vec![0.0]));
        let lv = g.var(Tensor::vector(vec![0.0]));
        let l = g.gaussian_nll(m, lv, &Tensor::vector(vec![1.0])).unwrap();
        assert!((g.value(l).item() - 0.5 * (1.0 + ln2pi)).abs() < 1e-12);
    }

    #[test]
    fn attention_with_single_key_returns_value() {
        // softmax over a singleton is 1, so the output is that value row,
        // whatever the query.
        let mut g = Graph::new();
        let q = g.constant(Tensor::vector(vec![9.0, -3.0]));
        let k = g.constant(Tensor::matrix(1, 2, vec![0.1, 0.2]));
        let v = g.constant(Tensor::matrix(1, 2, vec![5.0, 6.0]));
        let scores = g.matvec(k, q).unwrap();
        let attn = g.softmax_rows(scores).unwrap();
        let vt = g.transpose(v).unwrap();
        let out = g.matvec(vt, attn).unwrap();
        assert_eq!(g.value(out).data(), &[5.0, 6.0]);
    }

    #[test]
    fn max_pool_ties_route_gradient_to_lowest_row() {
        let mut g = Graph::new();
        let x = g.var(Tensor::matrix(3, 2, vec![
            2.0, 1.0, //
            2.0, 5.0, //
            2.0, 5.0,
        ]));
        let m = g.max_rows(x).unwrap();
        let loss = g.sum_all(m);
        let grads = g.backward(loss).unwrap();
        let gx = grads[x.0].as_ref().unwrap();
        // column 0 ties across all rows -> row 0; column 1 ties rows 1,2 -> row 1.
        assert_eq!(gx.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn threshold_ste_is_binary_forward_identity_backward() {
        let mut g = Graph::new();
        let p = g.var(Tensor::vector(vec![0.2, 0.7, 0.9]));
        let m = g.threshold_ste(p, 0.7);
        assert_eq!(g.value(m).data(), &[0.0, 0.0, 1.0]);
        let s = g.sum_all(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[p.0].as_ref().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(
            g.add(a, b),
            Err(NnError::ShapeMismatch { .. })
        ));
        let w = g.constant(Tensor::matrix(2, 2, vec![1.0; 4]));
        assert!(matches!(
            g.matvec(w, b),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![2.0]));
        let v = g.var(Tensor::vector(vec![3.0]));
        let y = g.mul(c, v).unwrap();
        let loss = g.sum_all(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads[c.0].is_none());
        assert_eq!(grads[v.0].as_ref().unwrap().data(), &[2.0]);
    }
}
