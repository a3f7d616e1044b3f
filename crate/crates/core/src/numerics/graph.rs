//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Graph`] borrows the model's [`ParamStore`] for the duration of one
//! forward pass. Every operation appends a node holding its output value;
//! [`Graph::backward`] walks the tape in reverse and returns the gradients of
//! every parameter the loss reached.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, row_stats};
use super::{ParamGrads, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a[m×n] + b[1×n]` broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Softmax(NodeId, usize),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    },
    Gelu(NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    SliceRows(NodeId, usize),
    Transpose(NodeId),
    MeanRows(NodeId),
    Sum(NodeId),
    CrossEntropy(NodeId, Vec<usize>),
}

struct Node<T> {
    op: Op,
    // `None` for parameter leaves: their value lives in the store.
    value: Option<Tensor<T>>,
}

pub struct Graph<'p, T> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
    probe: Option<Vec<(String, NodeId)>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            probe: None,
            dropout_rng: None,
        }
    }

    /// Enables dropout masks for this pass (training only).
    pub fn with_dropout_rng(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    /// Inverted dropout; the identity unless a dropout rng is set and `p > 0`.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if p <= 0.0 || self.dropout_rng.is_none() {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).len();
        let rng = self.dropout_rng.as_mut().expect("checked");
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, m)
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Starts recording attention maps passed to [`Graph::note_attention`].
    pub fn enable_attention_probe(&mut self) {
        self.probe = Some(Vec::new());
    }

    pub fn probing(&self) -> bool {
        self.probe.is_some()
    }

    pub fn note_attention(&mut self, label: String, map: NodeId) {
        if let Some(p) = self.probe.as_mut() {
            p.push((label, map));
        }
    }

    pub fn attention_maps(&self) -> Vec<(String, Tensor<T>)> {
        self.probe
            .iter()
            .flatten()
            .map(|(l, id)| (l.clone(), self.value(*id).clone()))
            .collect()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (_, Some(v)) => v,
            (Op::Param(p), None) => self.store.value(*p),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Constant, t)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    fn same_shape(&self, what: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vr) = (self.value(a), self.value(row));
        let n = va.cols();
        if vr.len() != n {
            return Err(Error::Shape(format!(
                "add_row: {:?} + {:?}",
                va.shape(),
                vr.shape()
            )));
        }
        let mut out = va.clone();
        if n > 0 {
            for r in out.data_mut().chunks_mut(n) {
                for (x, &b) in r.iter_mut().zip(vr.data()) {
                    *x = *x + b;
                }
            }
        }
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = T::of(c);
        let v = self.value(a).map(|x| x * k);
        self.push(Op::Scale(a, c), v)
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let v = kernels::softmax(self.value(a), axis)?;
        Ok(self.push(Op::Softmax(a, axis), v))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let v = kernels::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(Op::LayerNorm { x, gamma, beta, eps }, v))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = kernels::gelu(self.value(a));
        self.push(Op::Gelu(a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = kernels::relu(self.value(a));
        self.push(Op::Relu(a), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = self.value(parts[0]).rows();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(Error::Shape(format!(
                "concat_cols: {rows} rows vs {:?}",
                self.value(*bad).shape()
            )));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::matrix(rows, total, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let cols = self.value(parts[0]).cols();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).cols() != cols) {
            return Err(Error::Shape(format!(
                "concat_rows: width {cols} vs {:?}",
                self.value(*bad).shape()
            )));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let v = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        let (r, c) = va.require_matrix("slice_cols")?;
        if start + len > c {
            return Err(Error::Shape(format!(
                "slice_cols: [{start}, {}) out of width {c}",
                start + len
            )));
        }
        let data = (0..r)
            .flat_map(|i| va.row(i)[start..start + len].iter().copied())
            .collect();
        let v = Tensor::matrix(r, len, data)?;
        Ok(self.push(Op::SliceCols(a, start), v))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        let (r, c) = va.require_matrix("slice_rows")?;
        if start + len > r {
            return Err(Error::Shape(format!(
                "slice_rows: [{start}, {}) out of {r} rows",
                start + len
            )));
        }
        let v = Tensor::matrix(len, c, va.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(Op::SliceRows(a, start), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Column-wise mean of an `m×n` matrix, giving `1×n`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let (r, c) = va.require_matrix("mean_rows")?;
        if r == 0 {
            return Err(Error::Shape("mean_rows over zero rows".into()));
        }
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(va.row(i)) {
                *o = *o + x;
            }
        }
        let n = T::of(r as f64);
        out.iter_mut().for_each(|o| *o = *o / n);
        Ok(self.push(Op::MeanRows(a), Tensor::row_vector(out)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::filled(&[1, 1], s))
    }

    /// Mean cross-entropy of `labels` under softmax of the `B×C` logits.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let loss = kernels::cross_entropy(self.value(logits), labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss}")));
        }
        Ok(self.push(
            Op::CrossEntropy(logits, labels.to_vec()),
            Tensor::filled(&[1, 1], loss),
        ))
    }

    /// Reverse-mode pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<ParamGrads<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward on non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = ParamGrads {
            grads: vec![None; self.store.len()],
        };
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |id: NodeId, t: Tensor<T>| match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(p) => out.grads[p.0] = Some(g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(*a, kernels::matmul(&g, &vb.transpose())?);
                    acc(*b, kernels::matmul(&va.transpose(), &g)?);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(*a, zip(&g, vb, |x, y| x * y));
                    acc(*b, zip(&g, va, |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut sums = vec![T::zero(); n];
                    if n > 0 {
                        for r in g.data().chunks(n) {
                            for (s, &x) in sums.iter_mut().zip(r) {
                                *s = *s + x;
                            }
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    acc(*row, Tensor::new(shape, sums)?);
                    acc(*a, g);
                }
                Op::Scale(a, c) => {
                    let k = T::of(*c);
                    acc(*a, g.map(|x| x * k));
                }
                Op::Softmax(a, axis) => {
                    let y = self.nodes[i].value.as_ref().expect("op value");
                    acc(*a, softmax_backward(y, &g, *axis));
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (dx, dg, db) = layer_norm_backward(self.value(*x), self.value(*gamma), &g, *eps);
                    acc(*x, dx);
                    acc(*gamma, dg.reshape(self.value(*gamma).shape().to_vec())?);
                    acc(*beta, db.reshape(self.value(*beta).shape().to_vec())?);
                }
                Op::Gelu(a) => {
                    let d = zip(&g, self.value(*a), |gy, x| gy * kernels::gelu_grad_scalar(x));
                    acc(*a, d);
                }
                Op::Relu(a) => {
                    let d = zip(
                        &g,
                        self.value(*a),
                        |gy, x| {
                            if x > T::zero() {
                                gy
                            } else {
                                T::zero()
                            }
                        },
                    );
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let data = (0..rows)
                            .flat_map(|r| g.row(r)[offset..offset + w].iter().copied())
                            .collect();
                        acc(p, Tensor::matrix(rows, w, data)?);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let data = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        acc(p, Tensor::matrix(r, cols, data)?);
                        offset += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let va = self.value(*a);
                    let mut d = Tensor::zeros(va.shape());
                    let w = g.cols();
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                    }
                    acc(*a, d);
                }
                Op::SliceRows(a, start) => {
                    let va = self.value(*a);
                    let mut d = Tensor::zeros(va.shape());
                    let c = va.cols();
                    d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(*a, d);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::MeanRows(a) => {
                    let va = self.value(*a);
                    let n = T::of(va.rows() as f64);
                    let mut d = Tensor::zeros(va.shape());
                    for r in 0..va.rows() {
                        for (o, &x) in d.row_mut(r).iter_mut().zip(g.data()) {
                            *o = x / n;
                        }
                    }
                    acc(*a, d);
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    acc(*a, Tensor::filled(self.value(*a).shape(), s));
                }
                Op::CrossEntropy(logits, labels) => {
                    let z = self.value(*logits);
                    let b = T::of(labels.len() as f64);
                    let scale = g.data()[0] / b;
                    let mut d = kernels::softmax(z, 1)?;
                    for (r, &l) in labels.iter().enumerate() {
                        let row = d.row_mut(r);
                        row[l] = row[l] - T::one();
                        row.iter_mut().for_each(|v| *v = *v * scale);
                    }
                    acc(*logits, d);
                }
            }
        }
        Ok(out)
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    if axis == 0 {
        return softmax_backward(&y.transpose(), &g.transpose(), 1).transpose();
    }
    let c = y.cols();
    let mut d = g.clone();
    if c == 0 {
        return d;
    }
    for (dr, yr) in d.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
        let dot: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
        for (dv, &yv) in dr.iter_mut().zip(yr) {
            *dv = yv * (*dv - dot);
        }
    }
    d
}

fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    g: &Tensor<T>,
    eps: f64,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = x.cols();
    let n = T::of(d as f64);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let gm = gamma.data();
    for r in 0..x.len() / d.max(1) {
        let xr = x.row(r);
        let gr = g.row(r);
        let (mean, rstd) = row_stats(xr, eps);
        let xhat: Vec<T> = xr.iter().map(|&v| (v - mean) * rstd).collect();
        let dxhat: Vec<T> = gr.iter().zip(gm).map(|(&a, &b)| a * b).collect();
        let sum_dxhat: T = dxhat.iter().copied().sum();
        let sum_dxhat_xhat: T = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
        for j in 0..d {
            dgamma[j] = dgamma[j] + gr[j] * xhat[j];
            dbeta[j] = dbeta[j] + gr[j];
        }
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = rstd / n * (n * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
        }
    }
    (dx, Tensor::row_vector(dgamma), Tensor::row_vector(dbeta))
}
