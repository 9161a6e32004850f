//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records ops in topological order as they are applied; values
//! are computed eagerly. [`Tape::backward`] walks the tape once in reverse
//! from a scalar loss node and returns per-node gradients. Tapes are cheap
//! and rebuilt for every training step.
//!
//! Every op validates its input shapes and checks its output for NaN/Inf,
//! so non-finite values surface as errors at the op that produced them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::tensor::Tensor;

/// Probability floor applied before any log of a probability.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [m,k] x [k,n] -> [m,n]
    MatMul(NodeId, NodeId),
    /// [b,m,k] x [b,k,n] -> [b,m,n]
    BatchMatMul(NodeId, NodeId),
    /// elementwise, identical shapes
    Add(NodeId, NodeId),
    /// [..., n] + [n], bias broadcast over leading axes
    AddBias(NodeId, NodeId),
    /// elementwise multiply, identical shapes
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    /// softmax over the trailing axis
    RowSoftmax(NodeId),
    /// log-softmax over the trailing axis (log-sum-exp stabilized)
    RowLogSoftmax(NodeId),
    /// ln(max(x, PROB_FLOOR)) elementwise
    LnClamped(NodeId),
    /// row lookup: table [v,d], ids of prefix shape -> prefix + [d]
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    MeanAxis {
        input: NodeId,
        axis: usize,
    },
    /// full reduction to a rank-0 scalar
    Sum(NodeId),
    Scale(NodeId, f64),
    /// swap the two trailing axes
    TransposeLast(NodeId),
    Reshape(NodeId),
}

impl Op {
    fn inputs(&self) -> [Option<NodeId>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::MatMul(a, b)
            | Op::BatchMatMul(a, b)
            | Op::Add(a, b)
            | Op::AddBias(a, b)
            | Op::Mul(a, b) => [Some(a), Some(b)],
            Op::Relu(a)
            | Op::Tanh(a)
            | Op::RowSoftmax(a)
            | Op::RowLogSoftmax(a)
            | Op::LnClamped(a)
            | Op::MeanAxis { input: a, .. }
            | Op::Sum(a)
            | Op::Scale(a, _)
            | Op::TransposeLast(a)
            | Op::Reshape(a) => [Some(a), None],
            Op::Gather { table, .. } => [Some(table), None],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients per tape node, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient tensor for `id`; a disconnected node yields all zeros.
    pub fn get(&self, tape: &Tape, id: NodeId) -> Tensor {
        let shape = tape.value(id).shape();
        match &self.grads[id.0] {
            Some(g) => Tensor::from_parts(shape.to_vec(), g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    /// Raw gradient data for `id` if any gradient reached it.
    pub fn raw(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    /// Registers an input tensor. `needs_grad` marks it as a differentiable
    /// leaf; constants should pass `false`.
    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> NodeId {
        self.push_unchecked(Op::Leaf, value, needs_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor) -> CoreResult<NodeId> {
        value.check_finite(name)?;
        let needs_grad = op
            .inputs()
            .iter()
            .flatten()
            .any(|id| self.nodes[id.0].needs_grad);
        Ok(self.push_unchecked(op, value, needs_grad))
    }

    // ---- ops ------------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = mm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Op::MatMul(a, b), Tensor::from_parts(vec![m, n], data))
    }

    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("batch-matmul", sa, sb));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = Vec::with_capacity(bt * m * n);
        for i in 0..bt {
            let da = &self.value(a).data()[i * m * k..(i + 1) * m * k];
            let db = &self.value(b).data()[i * k * n..(i + 1) * k * n];
            data.extend_from_slice(&mm(da, db, m, k, n));
        }
        self.push(
            "batch-matmul",
            Op::BatchMatMul(a, b),
            Tensor::from_parts(vec![bt, m, n], data),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        self.push("add", Op::Add(a, b), Tensor::from_parts(sa.to_vec(), data))
    }

    /// `a + bias` with `bias` broadcast over all leading axes of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> CoreResult<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sb.len() != 1 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(shape_err("add-bias", sa, sb));
        }
        let n = sb[0];
        let bv = self.value(bias).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        self.push(
            "add-bias",
            Op::AddBias(a, bias),
            Tensor::from_parts(sa.to_vec(), data),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        self.push("mul", Op::Mul(a, b), Tensor::from_parts(sa.to_vec(), data))
    }

    pub fn relu(&mut self, a: NodeId) -> CoreResult<NodeId> {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("relu", Op::Relu(a), t)
    }

    pub fn tanh(&mut self, a: NodeId) -> CoreResult<NodeId> {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| libm::tanh(x)).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("tanh", Op::Tanh(a), t)
    }

    pub fn row_softmax(&mut self, a: NodeId) -> CoreResult<NodeId> {
        let v = self.value(a);
        if v.is_scalar() {
            return Err(shape_err("row-softmax", v.shape(), &[]));
        }
        let cols = v.last_dim();
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(cols) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let exps: Vec<f64> = row.iter().map(|&x| libm::exp(x - max)).collect();
            let total: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / total));
        }
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("row-softmax", Op::RowSoftmax(a), t)
    }

    pub fn row_log_softmax(&mut self, a: NodeId) -> CoreResult<NodeId> {
        let v = self.value(a);
        if v.is_scalar() {
            return Err(shape_err("row-log-softmax", v.shape(), &[]));
        }
        let cols = v.last_dim();
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(cols) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
            data.extend(row.iter().map(|&x| x - lse));
        }
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("row-log-softmax", Op::RowLogSoftmax(a), t)
    }

    /// Elementwise `ln(max(x, PROB_FLOOR))`; the floor keeps logs of
    /// vanishing probabilities finite.
    pub fn ln_clamped(&mut self, a: NodeId) -> CoreResult<NodeId> {
        let v = self.value(a);
        let data = v
            .data()
            .iter()
            .map(|&x| libm::log(x.max(PROB_FLOOR)))
            .collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("ln-clamped", Op::LnClamped(a), t)
    }

    /// Embedding lookup: selects `ids` rows from a `[v, d]` table. The
    /// output shape is `prefix_shape + [d]` with `ids.len() == prod(prefix)`.
    pub fn gather_rows(
        &mut self,
        table: NodeId,
        ids: &[usize],
        prefix_shape: &[usize],
    ) -> CoreResult<NodeId> {
        let st = self.value(table).shape();
        if st.len() != 2 {
            return Err(shape_err("gather", st, prefix_shape));
        }
        let expect: usize = prefix_shape.iter().product();
        if expect != ids.len() || ids.is_empty() {
            return Err(CoreError::ShapeMismatch {
                op: "gather",
                detail: alloc::format!(
                    "prefix {prefix_shape:?} needs {expect} ids, got {}",
                    ids.len()
                ),
            });
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(CoreError::TokenOutOfRange { token: bad, vocab: v });
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let mut shape = prefix_shape.to_vec();
        shape.push(d);
        self.push(
            "gather",
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            Tensor::from_parts(shape, data),
        )
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> CoreResult<NodeId> {
        let v = self.value(a);
        if axis >= v.rank() {
            return Err(CoreError::ShapeMismatch {
                op: "mean-axis",
                detail: alloc::format!("axis {axis} out of range for shape {:?}", v.shape()),
            });
        }
        let shape = v.shape();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        let src = v.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let scale = 1.0 / len as f64;
        for x in &mut data {
            *x *= scale;
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        self.push(
            "mean-axis",
            Op::MeanAxis { input: a, axis },
            Tensor::from_parts(out_shape, data),
        )
    }

    pub fn sum(&mut self, a: NodeId) -> CoreResult<NodeId> {
        let total: f64 = self.value(a).data().iter().sum();
        self.push("sum", Op::Sum(a), Tensor::from_parts(Vec::new(), vec![total]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> CoreResult<NodeId> {
        if !c.is_finite() {
            return Err(CoreError::NonFinite { op: "scale" });
        }
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x * c).collect();
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push("scale", Op::Scale(a, c), t)
    }

    pub fn transpose_last(&mut self, a: NodeId) -> CoreResult<NodeId> {
        let v = self.value(a);
        if v.rank() < 2 {
            return Err(shape_err("transpose-last", v.shape(), &[]));
        }
        let shape = v.shape();
        let (m, n) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch: usize = shape[..shape.len() - 2].iter().product();
        let src = v.data();
        let mut data = vec![0.0; src.len()];
        for b in 0..batch {
            let base = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    data[base + j * m + i] = src[base + i * n + j];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        let r = out_shape.len();
        out_shape.swap(r - 2, r - 1);
        self.push(
            "transpose-last",
            Op::TransposeLast(a),
            Tensor::from_parts(out_shape, data),
        )
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> CoreResult<NodeId> {
        let v = self.value(a);
        let expect: usize = shape.iter().product();
        if expect != v.len() || shape.contains(&0) {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                detail: alloc::format!("cannot view {:?} as {shape:?}", v.shape()),
            });
        }
        let t = Tensor::from_parts(shape.to_vec(), v.data().to_vec());
        self.push("reshape", Op::Reshape(a), t)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse pass from a scalar loss. Node values are left untouched;
    /// leaves that the loss does not reach simply get no gradient (read as
    /// zeros through [`Gradients::get`]).
    pub fn backward(&self, loss: NodeId) -> CoreResult<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(CoreError::ShapeMismatch {
                op: "backward",
                detail: alloc::format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let dy = grads[idx].take().unwrap();
            self.propagate(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        idx: usize,
        dy: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> CoreResult<()> {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let da = mm_bt(dy, self.value(*b).data(), m, n, k);
                    self.accumulate(*a, da, grads);
                }
                if self.wants(*b) {
                    let db = mm_at(self.value(*a).data(), dy, m, k, n);
                    self.accumulate(*b, db, grads);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let mut da = Vec::with_capacity(bt * m * k);
                    for i in 0..bt {
                        da.extend_from_slice(&mm_bt(
                            &dy[i * m * n..(i + 1) * m * n],
                            &vb[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                        ));
                    }
                    self.accumulate(*a, da, grads);
                }
                if self.wants(*b) {
                    let mut db = Vec::with_capacity(bt * k * n);
                    for i in 0..bt {
                        db.extend_from_slice(&mm_at(
                            &va[i * m * k..(i + 1) * m * k],
                            &dy[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                        ));
                    }
                    self.accumulate(*b, db, grads);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.accumulate(*a, dy.to_vec(), grads);
                }
                if self.wants(*b) {
                    self.accumulate(*b, dy.to_vec(), grads);
                }
            }
            Op::AddBias(a, bias) => {
                if self.wants(*a) {
                    self.accumulate(*a, dy.to_vec(), grads);
                }
                if self.wants(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for (i, &g) in dy.iter().enumerate() {
                        db[i % n] += g;
                    }
                    self.accumulate(*bias, db, grads);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let da = zip_map(dy, self.value(*b).data(), |g, y| g * y);
                    self.accumulate(*a, da, grads);
                }
                if self.wants(*b) {
                    let db = zip_map(dy, self.value(*a).data(), |g, x| g * x);
                    self.accumulate(*b, db, grads);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let x = self.value(*a).data();
                    let da = zip_map(dy, x, |g, xi| if xi > 0.0 { g } else { 0.0 });
                    self.accumulate(*a, da, grads);
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    let da = zip_map(dy, out, |g, y| g * (1.0 - y * y));
                    self.accumulate(*a, da, grads);
                }
            }
            Op::RowSoftmax(a) => {
                if self.wants(*a) {
                    let cols = node.value.last_dim();
                    let mut da = Vec::with_capacity(dy.len());
                    for (gy, y) in dy.chunks(cols).zip(out.chunks(cols)) {
                        let dot: f64 = gy.iter().zip(y).map(|(g, p)| g * p).sum();
                        da.extend(gy.iter().zip(y).map(|(g, p)| p * (g - dot)));
                    }
                    self.accumulate(*a, da, grads);
                }
            }
            Op::RowLogSoftmax(a) => {
                if self.wants(*a) {
                    let cols = node.value.last_dim();
                    let mut da = Vec::with_capacity(dy.len());
                    for (gy, y) in dy.chunks(cols).zip(out.chunks(cols)) {
                        let total: f64 = gy.iter().sum();
                        da.extend(gy.iter().zip(y).map(|(g, ly)| g - libm::exp(*ly) * total));
                    }
                    self.accumulate(*a, da, grads);
                }
            }
            Op::LnClamped(a) => {
                if self.wants(*a) {
                    let x = self.value(*a).data();
                    let da = zip_map(dy, x, |g, xi| if xi > PROB_FLOOR { g / xi } else { 0.0 });
                    self.accumulate(*a, da, grads);
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let d = self.value(*table).shape()[1];
                    let mut dt = vec![0.0; self.value(*table).len()];
                    for (slot, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[id * d + j] += dy[slot * d + j];
                        }
                    }
                    self.accumulate(*table, dt, grads);
                }
            }
            Op::MeanAxis { input, axis } => {
                if self.wants(*input) {
                    let shape = self.value(*input).shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let len = shape[*axis];
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let scale = 1.0 / len as f64;
                    let mut da = vec![0.0; self.value(*input).len()];
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for i in 0..inner {
                                da[base + i] = dy[o * inner + i] * scale;
                            }
                        }
                    }
                    self.accumulate(*input, da, grads);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let da = vec![dy[0]; self.value(*a).len()];
                    self.accumulate(*a, da, grads);
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    let da = dy.iter().map(|&g| g * c).collect();
                    self.accumulate(*a, da, grads);
                }
            }
            Op::TransposeLast(a) => {
                if self.wants(*a) {
                    let shape = self.value(*a).shape();
                    let (m, n) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                    let batch: usize = shape[..shape.len() - 2].iter().product();
                    let mut da = vec![0.0; dy.len()];
                    for b in 0..batch {
                        let base = b * m * n;
                        for i in 0..m {
                            for j in 0..n {
                                da[base + i * n + j] = dy[base + j * m + i];
                            }
                        }
                    }
                    self.accumulate(*a, da, grads);
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    self.accumulate(*a, dy.to_vec(), grads);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn accumulate(&self, id: NodeId, contrib: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e += c;
                }
            }
            slot => *slot = Some(contrib),
        }
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> CoreError {
    CoreError::ShapeMismatch {
        op,
        detail: alloc::format!("incompatible shapes {a:?} and {b:?}"),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// C[m,n] = A[m,k] B[k,n]
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// C[m,k] = X[m,n] B[k,n]^T
fn mm_bt(x: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let xrow = &x[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += xrow[j] * brow[j];
            }
            c[i * k + p] = acc;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T X[m,n]
fn mm_at(a: &[f64], x: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let xrow = &x[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * xrow[j];
            }
        }
    }
    c
}
