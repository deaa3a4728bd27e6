use std::sync::Arc;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Log(Var),
    Embedding { table: Var, indices: Vec<usize> },
    Sum(Var),
    Mean(Var),
    SquaredError {
        pred: Var,
        target: Var,
        mask: Option<Arc<Tensor<S>>>,
    },
    CrossEntropy { logits: Var, target: usize, weight: S },
    BceWithLogits { logit: Var, target: S, weight: S },
}

#[derive(Debug)]
struct Node<S> {
    value: Arc<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
    param: Option<(u64, ParamId)>,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order and backward is a single reverse sweep. Broadcasting is
/// limited to [`Graph::add_bias`].
#[derive(Debug)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grad_enabled: bool,
}

/// Result of [`Graph::backward`]: one gradient buffer per node that needed one.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to `v`, if `v` required one.
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn softmax_rows<S: Scalar>(data: &[S], cols: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(cols) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let start = out.len();
        let mut total = S::zero();
        for &x in row {
            let e = (x - max).exp();
            total += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v = *v / total;
        }
    }
    out
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let total: S = row.iter().map(|&x| (x - max).exp()).sum();
    max + total.ln()
}

impl<S: Scalar> Graph<S> {
    /// Graph that records gradients for trainable leaves.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Graph for forward-only evaluation; nothing requires a gradient.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Arc<Tensor<S>>, requires_grad: bool, param: Option<(u64, ParamId)>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(Arc::new(value), false, None)
    }

    /// A free leaf that receives a gradient (used for gradient checks).
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.leaf(Arc::new(value), true, None)
    }

    /// Leaf bound to a stored parameter; frozen parameters get no gradient.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        let frozen = store.is_frozen(id);
        self.leaf(store.value_arc(id), !frozen, Some((store.uid(), id)))
    }

    pub(crate) fn param_grads<'a>(
        &'a self,
        store_uid: u64,
        grads: &'a Gradients<S>,
    ) -> impl Iterator<Item = (ParamId, Tensor<S>)> + 'a {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.param {
            Some((uid, id)) if uid == store_uid => grads.grads[i].as_ref().map(|g| {
                (
                    id,
                    Tensor {
                        shape: n.value.shape().to_vec(),
                        data: g.clone(),
                    },
                )
            }),
            _ => None,
        })
    }

    /// Matrix product. Supports `[m,k]x[k,n]`, `[m,k]x[k]` and `[k]x[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            ([m, k], [k2]) if k == k2 => (*m, *k, 1),
            ([k], [k2, n]) if k == k2 => (1, *k, *n),
            _ => return Err(Error::shape("matmul", &sa, &sb)),
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![S::zero(); m * n];
        matmul_into(av, bv, &mut out, m, k, n);
        let shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![m, n],
            (2, 1) => vec![m],
            _ => vec![n],
        };
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor { shape, data }, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds vector `bias` to `x` (a vector of the same length, or each row of a matrix).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let cols = *sx.last().unwrap_or(&0);
        if sb.len() != 1 || sb[0] != cols || sx.len() > 2 || sx.is_empty() {
            return Err(Error::shape("add_bias", &sx, &sb));
        }
        let bv = self.value(bias).data().to_vec();
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(&bv).map(|(&a, &b)| a + b))
            .collect();
        Ok(self.push(Tensor { shape: sx, data }, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Scale(x, factor), &[x])
    }

    /// Concatenates vectors, or matrices with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return Err(Error::invalid("concat", "no inputs")),
        };
        match first.len() {
            1 => {
                let mut data = Vec::new();
                for &p in parts {
                    if self.shape(p).len() != 1 {
                        return Err(Error::shape("concat", &first, self.shape(p)));
                    }
                    data.extend_from_slice(self.value(p).data());
                }
                let shape = vec![data.len()];
                Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec()), parts))
            }
            2 => {
                let rows = first[0];
                let mut total_cols = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if s.len() != 2 || s[0] != rows {
                        return Err(Error::shape("concat", &first, s));
                    }
                    total_cols += s[1];
                }
                let mut data = Vec::with_capacity(rows * total_cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                let shape = vec![rows, total_cols];
                Ok(self.push(Tensor { shape, data }, Op::Concat(parts.to_vec()), parts))
            }
            _ => Err(Error::invalid("concat", format!("unsupported rank {}", first.len()))),
        }
    }

    /// Contiguous sub-range `[start, start+len)` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 1 || len == 0 || start + len > s[0] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} out of bounds for shape {s:?}", start + len),
            ));
        }
        let data = self.value(x).data()[start..start + len].to_vec();
        Ok(self.push(Tensor { shape: vec![len], data }, Op::Slice { src: x, start }, &[x]))
    }

    fn map(&mut self, x: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor { shape, data }, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), |v| v.tanh())
    }

    /// Softmax along the last axis (max-subtracted).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || s.len() > 2 {
            return Err(Error::invalid("softmax", format!("unsupported shape {s:?}")));
        }
        let data = softmax_rows(self.value(x).data(), *s.last().unwrap());
        Ok(self.push(Tensor { shape: s, data }, Op::Softmax(x), &[x]))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, Op::Log(x), |v| v.ln())
    }

    /// Row `index` of an embedding table `[n, d]`, as a `[d]` vector.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        let v = self.embedding_rows(table, &[index])?;
        let node = &mut self.nodes[v.0];
        let d = node.value.shape()[1];
        Arc::make_mut(&mut node.value).shape = vec![d];
        Ok(v)
    }

    /// Rows of an embedding table gathered into an `[indices.len(), d]` matrix.
    pub fn embedding_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::invalid("embedding", format!("table must be 2-d, got {s:?}")));
        }
        if indices.is_empty() {
            return Err(Error::invalid("embedding", "no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::invalid(
                "embedding",
                format!("index {bad} out of range for table {s:?}"),
            ));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * s[1]);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let shape = vec![indices.len(), s[1]];
        Ok(self.push(
            Tensor { shape, data },
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let total: S = t.data().iter().copied().sum();
        let mean = total / S::lit(t.numel() as f64);
        self.push(Tensor::scalar(mean), Op::Mean(x), &[x])
    }

    /// `sum(mask * (pred - target)^2)`; without a mask every entry counts.
    pub fn squared_error(&mut self, pred: Var, target: Var, mask: Option<Tensor<S>>) -> Result<Var> {
        self.same_shape("squared_error", pred, target)?;
        if let Some(m) = &mask {
            if m.shape() != self.shape(pred) {
                return Err(Error::shape("squared_error", self.shape(pred), m.shape()));
            }
        }
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let total: S = match &mask {
            Some(m) => p
                .iter()
                .zip(t)
                .zip(m.data())
                .map(|((&a, &b), &w)| w * (a - b) * (a - b))
                .sum(),
            None => p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum(),
        };
        Ok(self.push(
            Tensor::scalar(total),
            Op::SquaredError {
                pred,
                target,
                mask: mask.map(Arc::new),
            },
            &[pred, target],
        ))
    }

    /// `weight * -log(softmax(logits)[target])`, computed with log-sum-exp.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, target: usize, weight: S) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 1 || target >= s[0] {
            return Err(Error::invalid(
                "cross_entropy_with_logits",
                format!("target {target} invalid for logits of shape {s:?}"),
            ));
        }
        let row = self.value(logits).data();
        let loss = weight * (log_sum_exp(row) - row[target]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                weight,
            },
            &[logits],
        ))
    }

    /// `weight * -(t log sigmoid(x) + (1-t) log(1 - sigmoid(x)))` for a single logit.
    pub fn bce_with_logits(&mut self, logit: Var, target: S, weight: S) -> Result<Var> {
        let t = self.value(logit);
        if t.numel() != 1 {
            return Err(Error::invalid(
                "bce_with_logits",
                format!("expected a single logit, got shape {:?}", t.shape()),
            ));
        }
        let x = t.item();
        let loss = weight * (x.max(S::zero()) - x * target + (S::one() + (-x.abs()).exp()).ln());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logit,
                target,
                weight,
            },
            &[logit],
        ))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        if !loss_node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<S>>], v: Var, f: impl FnOnce(&mut [S])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![S::zero(); self.nodes[v.0].value.numel()]);
        f(buf);
    }

    fn propagate(&self, node: &Node<S>, dy: &[S], grads: &mut [Option<Vec<S>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = match (sa, sb) {
                    ([m, k], [_, n]) => (*m, *k, *n),
                    ([m, k], [_]) => (*m, *k, 1),
                    ([k], [_, n]) => (1, *k, *n),
                    _ => unreachable!("checked in forward"),
                };
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA[m,k] += dY[m,n] * B^T
                self.acc(grads, *a, |ga| {
                    for i in 0..m {
                        let dyr = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let br = &bv[p * n..(p + 1) * n];
                            let mut s = S::zero();
                            for j in 0..n {
                                s += dyr[j] * br[j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                // dB[k,n] += A^T * dY
                self.acc(grads, *b, |gb| {
                    for i in 0..m {
                        let dyr = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == S::zero() {
                                continue;
                            }
                            let gr = &mut gb[p * n..(p + 1) * n];
                            for j in 0..n {
                                gr[j] += a_ip * dyr[j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| add_into(g, dy));
                self.acc(grads, *b, |g| add_into(g, dy));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| add_into(g, dy));
                self.acc(grads, *b, |g| {
                    for (g, &d) in g.iter_mut().zip(dy) {
                        *g -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * o;
                    }
                });
                self.acc(grads, *b, |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * o;
                    }
                });
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, |g| add_into(g, dy));
                let cols = self.shape(*b)[0];
                self.acc(grads, *b, |g| {
                    for row in dy.chunks(cols) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(x, c) => {
                self.acc(grads, *x, |g| {
                    for (g, &d) in g.iter_mut().zip(dy) {
                        *g += d * *c;
                    }
                });
            }
            Op::Concat(parts) => {
                let out_shape = node.value.shape();
                if out_shape.len() == 1 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).numel();
                        self.acc(grads, p, |g| add_into(g, &dy[offset..offset + len]));
                        offset += len;
                    }
                } else {
                    let (rows, total) = (out_shape[0], out_shape[1]);
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.shape(p)[1];
                        self.acc(grads, p, |g| {
                            for r in 0..rows {
                                let src = &dy[r * total + offset..r * total + offset + cols];
                                add_into(&mut g[r * cols..(r + 1) * cols], src);
                            }
                        });
                        offset += cols;
                    }
                }
            }
            Op::Slice { src, start } => {
                self.acc(grads, *src, |g| add_into(&mut g[*start..*start + dy.len()], dy));
            }
            Op::Sigmoid(x) => {
                self.acc(grads, *x, |g| {
                    for ((g, &d), &s) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * s * (S::one() - s);
                    }
                });
            }
            Op::Tanh(x) => {
                self.acc(grads, *x, |g| {
                    for ((g, &d), &t) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * (S::one() - t * t);
                    }
                });
            }
            Op::Softmax(x) => {
                let cols = *node.value.shape().last().unwrap();
                self.acc(grads, *x, |g| {
                    for ((gr, dr), yr) in g.chunks_mut(cols).zip(dy.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: S = dr.iter().zip(yr).map(|(&d, &s)| d * s).sum();
                        for ((g, &d), &s) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += s * (d - dot);
                        }
                    }
                });
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.acc(grads, *x, |g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += d / v;
                    }
                });
            }
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                self.acc(grads, *table, |g| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut g[i * d..(i + 1) * d], &dy[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Sum(x) => {
                self.acc(grads, *x, |g| {
                    for g in g.iter_mut() {
                        *g += dy[0];
                    }
                });
            }
            Op::Mean(x) => {
                let n = S::lit(self.value(*x).numel() as f64);
                self.acc(grads, *x, |g| {
                    for g in g.iter_mut() {
                        *g += dy[0] / n;
                    }
                });
            }
            Op::SquaredError { pred, target, mask } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let two = S::lit(2.0);
                let diff: Vec<S> = match mask {
                    Some(m) => p
                        .iter()
                        .zip(t)
                        .zip(m.data())
                        .map(|((&a, &b), &w)| two * w * (a - b) * dy[0])
                        .collect(),
                    None => p.iter().zip(t).map(|(&a, &b)| two * (a - b) * dy[0]).collect(),
                };
                self.acc(grads, *pred, |g| add_into(g, &diff));
                self.acc(grads, *target, |g| {
                    for (g, &d) in g.iter_mut().zip(&diff) {
                        *g -= d;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                target,
                weight,
            } => {
                let probs = softmax_rows(self.value(*logits).data(), self.value(*logits).numel());
                let scale = *weight * dy[0];
                self.acc(grads, *logits, |g| {
                    for (j, (g, &p)) in g.iter_mut().zip(&probs).enumerate() {
                        let onehot = if j == *target { S::one() } else { S::zero() };
                        *g += scale * (p - onehot);
                    }
                });
            }
            Op::BceWithLogits {
                logit,
                target,
                weight,
            } => {
                let x = self.value(*logit).item();
                self.acc(grads, *logit, |g| {
                    g[0] += *weight * dy[0] * (sigmoid(x) - *target);
                });
            }
        }
    }
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `out[m,n] = a[m,k] * b[k,n]`, skipping zero entries of `a` (rating inputs are sparse).
fn matmul_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += a_ip * brow[j];
            }
        }
    }
}

/// Numerically stable logistic function on plain values.
pub fn sigmoid_value<S: Scalar>(x: S) -> S {
    sigmoid(x)
}

/// Softmax of a plain slice.
pub fn softmax_values<S: Scalar>(x: &[S]) -> Vec<S> {
    softmax_rows(x, x.len())
}
