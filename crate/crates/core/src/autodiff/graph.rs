use serde::{Deserialize, Serialize};

use super::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward-pass multiplier of a gradient-reversal node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversalCoefficient(f64);

impl ReversalCoefficient {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::Config(format!(
                "reversal coefficient must be finite and non-negative, got {scale}"
            )));
        }
        Ok(Self(scale))
    }

    pub fn scale(self) -> f64 {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// Matrix plus a row vector broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Scale(Var, f64),
    Reverse(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRow(Var, usize),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    /// Elementwise max over the inputs; `winner[j]` is the input that won entry `j`.
    MaxOverTime {
        inputs: Vec<Var>,
        winner: Vec<usize>,
    },
    GatherRows {
        table: Var,
        ids: Vec<u32>,
    },
    EmbeddingMean {
        table: Var,
        sequences: Vec<Vec<u32>>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Define-by-run computation graph.
///
/// Nodes are appended in evaluation order, so index order is a topological
/// order and the graph is acyclic by construction. A graph is built per
/// minibatch and dropped after `backward`.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, op: Op, value: Tensor) -> Result<Var> {
        check_finite(name, &value)?;
        let needs_grad = self.op_needs_grad(&op);
        Ok(self.push(op, value, needs_grad))
    }

    fn op_needs_grad(&self, op: &Op) -> bool {
        let ng = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                ng(a) || ng(b)
            }
            Op::Tanh(a)
            | Op::Scale(a, _)
            | Op::Reverse(a, _)
            | Op::SelectRow(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a) => ng(a),
            Op::ConcatCols(xs) | Op::ConcatRows(xs) => xs.iter().any(ng),
            Op::MaxOverTime { inputs, .. } => inputs.iter().any(ng),
            Op::GatherRows { table, .. } | Op::EmbeddingMean { table, .. } => ng(table),
            Op::CrossEntropy { logits, .. } => ng(logits),
        }
    }

    /// A trainable leaf: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A constant leaf: no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Matrix product. Accepts `[m,k]x[k,n]`, `[m,k]x[k]` and `[k]x[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let a_vec = ta.rank() == 1;
        let b_vec = tb.rank() == 1;
        if ta.rank() > 2 || tb.rank() > 2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = if b_vec { (tb.len(), 1) } else { (tb.rows(), tb.cols()) };
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let shape = match (a_vec, b_vec) {
            (false, false) => vec![m, n],
            (false, true) => vec![m],
            (true, false) => vec![n],
            (true, true) => vec![1],
        };
        self.push_checked("matmul", Op::MatMul(a, b), Tensor::from_parts(shape, data))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        self.push_checked(name, op, value)
    }

    /// Elementwise sum of equal shapes, or a matrix plus a row vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b));
        }
        if ta.rank() == 2 && tb.rank() == 1 && tb.len() == ta.cols() {
            let cols = ta.cols();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + tb.data()[i % cols])
                .collect();
            let value = Tensor::from_parts(ta.shape().to_vec(), data);
            return self.push_checked("add", Op::AddRow(a, b), value);
        }
        Err(mismatch("add", ta, tb))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        self.push_checked("tanh", Op::Tanh(a), value)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * factor).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        self.push_checked("scale", Op::Scale(a, factor), value)
    }

    /// Identity forward; on the backward pass the gradient is multiplied by
    /// `-coefficient`.
    pub fn grad_reverse(&mut self, a: Var, coefficient: ReversalCoefficient) -> Var {
        let value = self.value(a).clone();
        let needs_grad = self.nodes[a.0].needs_grad;
        self.push(Op::Reverse(a, coefficient.scale()), value, needs_grad)
    }

    /// Concatenate along the last axis. Inputs must have equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
        let first_t = self.value(*first);
        let rows = first_t.rows();
        let rank = first_t.rank();
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows || t.rank() != rank {
                return Err(mismatch("concat", first_t, t));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let shape = if rank == 1 { vec![total] } else { vec![rows, total] };
        self.push_checked("concat", Op::ConcatCols(parts.to_vec()), Tensor::from_parts(shape, data))
    }

    /// Stack rows: each input is `[n]` or `[r_i, n]`; the output is `[sum r_i, n]`.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("concat_rows of zero tensors".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols || t.rank() > 2 {
                return Err(mismatch("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_parts(vec![rows, cols], data);
        self.push_checked("concat_rows", Op::ConcatRows(parts.to_vec()), value)
    }

    /// Row `r` of a matrix as a rank-1 tensor.
    pub fn select_row(&mut self, a: Var, r: usize) -> Result<Var> {
        let t = self.value(a);
        if r >= t.rows() {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                reason: format!("row {r} out of range"),
            });
        }
        let value = Tensor::from_parts(vec![t.cols()], t.row(r).to_vec());
        self.push_checked("select_row", Op::SelectRow(a, r), value)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push_checked("sum", Op::Sum(a), Tensor::from_parts(vec![1], vec![s]))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_checked("mean", Op::Mean(a), Tensor::from_parts(vec![1], vec![s]))
    }

    /// Column-wise mean over the rows of a matrix, giving a rank-1 tensor.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, x) in out.iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= rows as f64;
        }
        self.push_checked("mean_rows", Op::MeanRows(a), Tensor::from_parts(vec![cols], out))
    }

    /// Elementwise maximum across a sequence of equally shaped tensors.
    /// Ties go to the earliest time step.
    pub fn max_over_time(&mut self, steps: &[Var]) -> Result<Var> {
        let first = steps
            .first()
            .ok_or_else(|| Error::Config("max_over_time of an empty sequence".into()))?;
        let shape = self.value(*first).shape().to_vec();
        let mut best = self.value(*first).data().to_vec();
        let mut winner = vec![0usize; best.len()];
        for (t, s) in steps.iter().enumerate().skip(1) {
            let v = self.value(*s);
            if v.shape() != shape.as_slice() {
                return Err(mismatch("max_over_time", self.value(*first), v));
            }
            for (j, x) in v.data().iter().enumerate() {
                if *x > best[j] {
                    best[j] = *x;
                    winner[j] = t;
                }
            }
        }
        let op = Op::MaxOverTime {
            inputs: steps.to_vec(),
            winner,
        };
        self.push_checked("max_over_time", op, Tensor::from_parts(shape, best))
    }

    /// Rows of `table` selected by `ids`, shape `[ids.len(), cols]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let t = self.value(table);
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id as usize >= rows {
                return Err(Error::TokenOutOfRange { id, vocab: rows });
            }
            data.extend_from_slice(t.row(id as usize));
        }
        let value = Tensor::from_parts(vec![ids.len(), cols], data);
        let op = Op::GatherRows {
            table,
            ids: ids.to_vec(),
        };
        self.push_checked("gather_rows", op, value)
    }

    /// For each sequence, the mean of its embedding rows: `[sequences.len(), cols]`.
    pub fn embedding_mean(&mut self, table: Var, sequences: &[&[u32]]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        if sequences.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut data = vec![0.0; sequences.len() * cols];
        for (b, seq) in sequences.iter().enumerate() {
            if seq.is_empty() {
                return Err(Error::EmptySequence);
            }
            let out = &mut data[b * cols..(b + 1) * cols];
            for &id in seq.iter() {
                if id as usize >= rows {
                    return Err(Error::TokenOutOfRange { id, vocab: rows });
                }
                for (o, x) in out.iter_mut().zip(t.row(id as usize)) {
                    *o += x;
                }
            }
            let inv = 1.0 / seq.len() as f64;
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let value = Tensor::from_parts(vec![sequences.len(), cols], data);
        let op = Op::EmbeddingMean {
            table,
            sequences: sequences.iter().map(|s| s.to_vec()).collect(),
        };
        self.push_checked("embedding_mean", op, value)
    }

    /// Softmax cross-entropy, averaged over rows. `logits` is `[classes]` for
    /// a single example or `[batch, classes]`; `labels` has one entry per row.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (rows, classes) = (t.rows(), t.cols());
        if t.rank() > 2 || labels.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let mut probs = Vec::with_capacity(rows * classes);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + z.ln();
            total += log_z - row[label];
            probs.extend(row.iter().map(|x| (x - log_z).exp()));
        }
        let value = Tensor::from_parts(vec![1], vec![total / rows as f64]);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push_checked("cross_entropy", op, value)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.value(loss).shape();
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        for (g, node) in grads.iter().zip(&self.nodes) {
            if let Some(g) = g {
                check_finite("backward", g)?;
            }
            debug_assert!(g.as_ref().map_or(true, |g| g.shape() == node.value.shape()));
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, contribution: Tensor) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op, value: &Tensor, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let map = |t: &Tensor, f: &dyn Fn(usize, f64) -> f64| {
            let data = t.data().iter().enumerate().map(|(i, x)| f(i, *x)).collect();
            Tensor::from_parts(t.shape().to_vec(), data)
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = if tb.rank() == 1 { 1 } else { tb.cols() };
                if self.wants(*a) {
                    // dA = dC * B^T, with B stored [k, n]
                    let g = matmul_bt_raw(up.data(), tb.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(ta.shape().to_vec(), g));
                }
                if self.wants(*b) {
                    // dB = A^T * dC
                    let g = matmul_at_raw(ta.data(), up.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::from_parts(tb.shape().to_vec(), g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.clone());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, up.clone());
                if self.wants(*b) {
                    let cols = up.cols();
                    let mut g = vec![0.0; cols];
                    for r in 0..up.rows() {
                        for (o, x) in g.iter_mut().zip(up.row(r)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(vec![cols], g));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, up.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, map(up, &|_, x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    self.accumulate(grads, *a, map(up, &|i, x| x * tb.data()[i]));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, map(up, &|i, x| x * ta.data()[i]));
                }
            }
            Op::Tanh(a) => {
                let y = value.data();
                self.accumulate(grads, *a, map(up, &|i, x| x * (1.0 - y[i] * y[i])));
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, map(up, &|_, x| x * f)),
            Op::Reverse(a, c) => self.accumulate(grads, *a, map(up, &|_, x| -(c * x))),
            Op::ConcatCols(parts) => {
                let rows = up.rows();
                let total = up.cols();
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let w = t.cols();
                    if self.wants(*p) {
                        let mut g = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            g.extend_from_slice(&up.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, *p, Tensor::from_parts(t.shape().to_vec(), g));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let len = t.len();
                    if self.wants(*p) {
                        let g = up.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, *p, Tensor::from_parts(t.shape().to_vec(), g));
                    }
                    offset += len;
                }
            }
            Op::SelectRow(a, r) => {
                let mut g = Tensor::zeros(self.value(*a).shape());
                let cols = g.cols();
                g.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(up.data());
                self.accumulate(grads, *a, g);
            }
            Op::Sum(a) => {
                let s = up.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), s));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let s = up.data()[0] / t.len() as f64;
                self.accumulate(grads, *a, Tensor::full(t.shape(), s));
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let rows = t.rows();
                let inv = 1.0 / rows as f64;
                let mut g = Vec::with_capacity(t.len());
                for _ in 0..rows {
                    g.extend(up.data().iter().map(|x| x * inv));
                }
                self.accumulate(grads, *a, Tensor::from_parts(t.shape().to_vec(), g));
            }
            Op::MaxOverTime { inputs, winner } => {
                for (t, p) in inputs.iter().enumerate() {
                    if !self.wants(*p) {
                        continue;
                    }
                    let g = map(up, &|j, x| if winner[j] == t { x } else { 0.0 });
                    self.accumulate(grads, *p, g);
                }
            }
            Op::GatherRows { table, ids } => {
                if !self.wants(*table) {
                    return;
                }
                let mut g = Tensor::zeros(self.value(*table).shape());
                let cols = g.cols();
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut g.data_mut()[id as usize * cols..(id as usize + 1) * cols];
                    for (d, x) in dst.iter_mut().zip(up.row(r)) {
                        *d += x;
                    }
                }
                self.accumulate(grads, *table, g);
            }
            Op::EmbeddingMean { table, sequences } => {
                if !self.wants(*table) {
                    return;
                }
                let mut g = Tensor::zeros(self.value(*table).shape());
                let cols = g.cols();
                for (b, seq) in sequences.iter().enumerate() {
                    let inv = 1.0 / seq.len() as f64;
                    let src = up.row(b);
                    for &id in seq {
                        let dst = &mut g.data_mut()[id as usize * cols..(id as usize + 1) * cols];
                        for (d, x) in dst.iter_mut().zip(src) {
                            *d += x * inv;
                        }
                    }
                }
                self.accumulate(grads, *table, g);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let t = self.value(*logits);
                let classes = t.cols();
                let s = up.data()[0] / labels.len() as f64;
                let mut g = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    g[r * classes + label] -= 1.0;
                }
                for x in &mut g {
                    *x *= s;
                }
                self.accumulate(grads, *logits, Tensor::from_parts(t.shape().to_vec(), g));
            }
        }
    }
}

/// Result of [`Graph::backward`]: one gradient per node. Nodes the loss does
/// not depend on (and constants) report zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Whether any gradient signal reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}
