//! Tape-based reverse-mode differentiation over 2-D tensors.

use std::collections::HashMap;

use super::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Variance floor inside feature normalization.
pub const NORM_EPS: f64 = 1e-7;
/// Running-statistics momentum.
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sin(Var),
    Cos(Var),
    Sqrt(Var),
    /// Output is x̂; `inv_std` per column; `batch` when statistics came from the input.
    Norm { x: Var, inv_std: Vec<f64>, batch: bool },
    SegmentMax { x: Var, argmax: Vec<usize> },
    SegmentMean { x: Var, offsets: Vec<usize> },
    Gather { x: Var, idx: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, lo: usize },
    CrossEntropy { x: Var, labels: Vec<usize>, probs: Vec<f64> },
    Huber { x: Var, delta: f64 },
    RowMean(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires: bool,
}

/// Running-statistics update produced by a training-mode normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct StatUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    /// Normalize with batch statistics (training) rather than running ones.
    pub train: bool,
    /// Collect running-statistics updates from training-mode normalizations.
    pub record_stats: bool,
    stats: Vec<StatUpdate>,
    fault: Option<String>,
    branches: Vec<usize>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, train: bool) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            train,
            record_stats: train,
            stats: Vec::new(),
            fault: None,
            branches: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Records a value-dependent discrete choice (row selection, class
    /// decision). The loss is only differentiable where these stay fixed.
    pub fn note_branch(&mut self, choice: impl IntoIterator<Item = usize>) {
        self.branches.extend(choice);
        self.branches.push(usize::MAX);
    }

    pub fn branches(&self) -> &[usize] {
        &self.branches
    }

    pub fn take_stats(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stats)
    }

    /// First contract violation raised while building, if any.
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            Some(m) => Err(Error::Contract(m.clone())),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> Var {
        self.nodes.push(Node { value, op, requires });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    fn fail(&mut self, msg: String) -> Var {
        if self.fault.is_none() {
            self.fault = Some(msg);
        }
        self.push(Tensor::default(), Op::Leaf, false)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives gradients but is not stored (used by gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, name: &str) -> Var {
        let Some(i) = self.store.index_of(name) else {
            return self.fail(format!("unknown parameter {name}"));
        };
        if let Some(&v) = self.params.get(&i) {
            return v;
        }
        let e = self.store.entry(i);
        let v = self.push(e.value.clone(), Op::Param(i), e.requires_grad);
        self.params.insert(i, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return self.fail(format!("matmul: {sa:?} x {sb:?}"));
        }
        let v = self.value(a).matmul(self.value(b));
        let r = self.req(a) || self.req(b);
        self.push(v, Op::MatMul(a, b), r)
    }

    /// Adds a 1×C row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb[0] != 1 || sb[1] != sa[1] {
            return self.fail(format!("add_bias: {sa:?} + {sb:?}"));
        }
        let bias = &self.value(b).data;
        let mut v = self.value(a).clone();
        for row in v.data.chunks_mut(sa[1].max(1)) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
        let r = self.req(a) || self.req(b);
        self.push(v, Op::AddBias(a, b), r)
    }

    /// Multiplies every row of `a` elementwise by a 1×C row.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb[0] != 1 || sb[1] != sa[1] {
            return self.fail(format!("mul_row: {sa:?} * {sb:?}"));
        }
        let s = &self.value(b).data;
        let mut v = self.value(a).clone();
        for row in v.data.chunks_mut(sa[1].max(1)) {
            for (x, m) in row.iter_mut().zip(s) {
                *x *= m;
            }
        }
        let r = self.req(a) || self.req(b);
        self.push(v, Op::MulRow(a, b), r)
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return self.fail(format!("{what}: shape mismatch {sa:?} vs {sb:?}"));
        }
        let (x, y) = (self.value(a), self.value(b));
        let v = Tensor::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect());
        let r = self.req(a) || self.req(b);
        self.push(v, op, r)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        let r = self.req(a);
        self.push(v, Op::Scale(a, s), r)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let r = self.req(a);
        self.push(v, Op::Relu(a), r)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        let r = self.req(a);
        self.push(v, Op::Sin(a), r)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        let r = self.req(a);
        self.push(v, Op::Cos(a), r)
    }

    /// `sqrt(x + eps)`; `eps` keeps the derivative finite at zero.
    pub fn sqrt(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a).map(|x| (x.max(0.0) + eps).sqrt());
        let r = self.req(a);
        self.push(v, Op::Sqrt(a), r)
    }

    /// Column-wise standardization without affine terms. Training mode uses
    /// the batch statistics (and records a running update under `prefix`);
    /// evaluation, and single-row training batches, use the
    /// `{prefix}.rm`/`{prefix}.rv` buffers.
    pub fn feature_norm(&mut self, a: Var, prefix: &str) -> Var {
        let x = self.value(a);
        let (n, c) = (x.rows, x.cols);
        if self.train && n == 0 {
            return self.fail("feature_norm: empty batch".into());
        }
        let (mean, var, batch) = if self.train && n > 1 {
            let mut mean = vec![0.0; c];
            for row in x.data.chunks(c) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; c];
            for row in x.data.chunks(c) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var, true)
        } else {
            let (Some(rm), Some(rv)) =
                (self.store.get(&format!("{prefix}.rm")), self.store.get(&format!("{prefix}.rv")))
            else {
                return self.fail(format!("feature_norm: missing running statistics for {prefix}"));
            };
            if rm.cols != c || rv.cols != c {
                return self.fail(format!("feature_norm: {prefix} statistics have {} columns, input {c}", rm.cols));
            }
            (rm.data.clone(), rv.data.clone(), false)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut out = x.clone();
        for row in out.data.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        if batch && self.record_stats {
            let unbiased = n as f64 / (n as f64 - 1.0);
            self.stats.push(StatUpdate {
                prefix: prefix.to_string(),
                mean,
                var: var.iter().map(|v| v * unbiased).collect(),
            });
        }
        let r = self.req(a);
        self.push(out, Op::Norm { x: a, inv_std, batch }, r)
    }

    /// Column-wise max over each row segment `offsets[s]..offsets[s + 1]`.
    pub fn segment_max(&mut self, a: Var, offsets: &[usize]) -> Var {
        let x = self.value(a);
        if offsets.len() < 2 || *offsets.last().unwrap() != x.rows || offsets.windows(2).any(|w| w[1] <= w[0]) {
            return self.fail(format!("segment_max: invalid segments over {} rows", x.rows));
        }
        let c = x.cols;
        let b = offsets.len() - 1;
        let mut out = Tensor::zeros(b, c);
        let mut argmax = vec![0usize; b * c];
        for s in 0..b {
            for j in 0..c {
                let mut best = offsets[s];
                for i in offsets[s] + 1..offsets[s + 1] {
                    if x.data[i * c + j] > x.data[best * c + j] {
                        best = i;
                    }
                }
                argmax[s * c + j] = best;
                out.data[s * c + j] = x.data[best * c + j];
            }
        }
        let r = self.req(a);
        self.push(out, Op::SegmentMax { x: a, argmax }, r)
    }

    pub fn segment_mean(&mut self, a: Var, offsets: &[usize]) -> Var {
        let x = self.value(a);
        if offsets.len() < 2 || *offsets.last().unwrap() != x.rows || offsets.windows(2).any(|w| w[1] <= w[0]) {
            return self.fail(format!("segment_mean: invalid segments over {} rows", x.rows));
        }
        let c = x.cols;
        let b = offsets.len() - 1;
        let mut out = Tensor::zeros(b, c);
        for s in 0..b {
            let k = (offsets[s + 1] - offsets[s]) as f64;
            for i in offsets[s]..offsets[s + 1] {
                for j in 0..c {
                    out.data[s * c + j] += x.data[i * c + j] / k;
                }
            }
        }
        let r = self.req(a);
        self.push(out, Op::SegmentMean { x: a, offsets: offsets.to_vec() }, r)
    }

    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        if let Some(bad) = idx.iter().find(|&&i| i >= x.rows) {
            return self.fail(format!("gather: row {bad} out of {}", x.rows));
        }
        let c = x.cols;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&x.data[i * c..(i + 1) * c]);
        }
        let v = Tensor::from_vec(idx.len(), c, data);
        let r = self.req(a);
        self.push(v, Op::Gather { x: a, idx: idx.to_vec() }, r)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let Some(&first) = parts.first() else {
            return self.fail("concat_cols: no inputs".into());
        };
        let n = self.shape(first)[0];
        if parts.iter().any(|&p| self.shape(p)[0] != n) {
            return self.fail("concat_cols: row counts differ".into());
        }
        let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let r = parts.iter().any(|&p| self.req(p));
        self.push(Tensor::from_vec(n, total, data), Op::ConcatCols(parts.to_vec()), r)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let Some(&first) = parts.first() else {
            return self.fail("concat_rows: no inputs".into());
        };
        let c = self.shape(first)[1];
        if parts.iter().any(|&p| self.shape(p)[1] != c) {
            return self.fail("concat_rows: column counts differ".into());
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let n = data.len() / c.max(1);
        let r = parts.iter().any(|&p| self.req(p));
        self.push(Tensor::from_vec(n, c, data), Op::ConcatRows(parts.to_vec()), r)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let x = self.value(a);
        if lo > hi || hi > x.cols {
            return self.fail(format!("slice_cols: {lo}..{hi} of {}", x.cols));
        }
        let mut data = Vec::with_capacity(x.rows * (hi - lo));
        for i in 0..x.rows {
            data.extend_from_slice(&x.row(i)[lo..hi]);
        }
        let v = Tensor::from_vec(x.rows, hi - lo, data);
        let r = self.req(a);
        self.push(v, Op::SliceCols { x: a, lo }, r)
    }

    /// Per-row softmax cross-entropy (N×1).
    pub fn cross_entropy(&mut self, a: Var, labels: &[usize]) -> Var {
        let x = self.value(a);
        if labels.len() != x.rows || labels.iter().any(|&l| l >= x.cols) {
            return self.fail(format!("cross_entropy: {} labels for {:?}", labels.len(), x.shape()));
        }
        let c = x.cols;
        let mut probs = vec![0.0; x.data.len()];
        let mut out = Tensor::zeros(x.rows, 1);
        for i in 0..x.rows {
            let row = x.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - m).exp() / z;
            }
            out.data[i] = m + z.ln() - row[labels[i]];
        }
        let r = self.req(a);
        self.push(out, Op::CrossEntropy { x: a, labels: labels.to_vec(), probs }, r)
    }

    /// Elementwise Huber penalty.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let v = self.value(a).map(|x| if x.abs() <= delta { 0.5 * x * x } else { delta * (x.abs() - 0.5 * delta) });
        let r = self.req(a);
        self.push(v, Op::Huber { x: a, delta }, r)
    }

    pub fn row_mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols.max(1) as f64;
        let v = Tensor::column((0..x.rows).map(|i| x.row(i).iter().sum::<f64>() / c).collect());
        let r = self.req(a);
        self.push(v, Op::RowMean(a), r)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        let r = self.req(a);
        self.push(v, Op::Sum(a), r)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x.is_empty() {
            return self.fail("mean: empty tensor".into());
        }
        let v = Tensor::scalar(x.data.iter().sum::<f64>() / x.len() as f64);
        let r = self.req(a);
        self.push(v, Op::Mean(a), r)
    }

    /// Gradients of a scalar `loss` with respect to every trainable parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (grads, _) = self.backward_full(loss)?;
        Ok(grads)
    }

    /// Also returns gradients of every node (indexed by `Var`) for inspection.
    pub fn backward_full(&self, loss: Var) -> Result<(Gradients, Vec<Option<Tensor>>)> {
        self.check()?;
        if self.shape(loss) != [1, 1] {
            return Err(Error::Contract(format!("backward needs a scalar loss, got {:?}", self.shape(loss))));
        }
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients { grads: vec![None; self.store.len()] };
        g[loss.0] = Some(Tensor::scalar(1.0));
        let mut kept: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(gy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires {
                continue;
            }
            self.propagate(node, &gy, &mut g, &mut out);
            kept[i] = Some(gy);
        }
        Ok((out, kept))
    }

    fn acc(&self, g: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.nodes[v.0].requires {
            return;
        }
        match &mut g[v.0] {
            Some(e) => e.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    fn propagate(&self, node: &Node, gy: &Tensor, g: &mut [Option<Tensor>], out: &mut Gradients) {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(i) => match &mut out.grads[*i] {
                Some(e) => e.add_assign(gy),
                slot => *slot = Some(gy.clone()),
            },
            Op::MatMul(a, b) => {
                if self.req(*a) {
                    self.acc(g, *a, gy.matmul_t(val(*b)));
                }
                if self.req(*b) {
                    self.acc(g, *b, val(*a).t_matmul(gy));
                }
            }
            Op::AddBias(a, b) => {
                self.acc(g, *a, gy.clone());
                if self.req(*b) {
                    let mut db = Tensor::zeros(1, gy.cols);
                    for row in gy.data.chunks(gy.cols.max(1)) {
                        for (d, v) in db.data.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.acc(g, *b, db);
                }
            }
            Op::MulRow(a, b) => {
                let (x, s) = (val(*a), val(*b));
                let c = gy.cols.max(1);
                if self.req(*a) {
                    let mut da = gy.clone();
                    for row in da.data.chunks_mut(c) {
                        for (d, m) in row.iter_mut().zip(&s.data) {
                            *d *= m;
                        }
                    }
                    self.acc(g, *a, da);
                }
                if self.req(*b) {
                    let mut db = Tensor::zeros(1, gy.cols);
                    for (grow, xrow) in gy.data.chunks(c).zip(x.data.chunks(c)) {
                        for j in 0..gy.cols {
                            db.data[j] += grow[j] * xrow[j];
                        }
                    }
                    self.acc(g, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc(g, *a, gy.clone());
                self.acc(g, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.acc(g, *a, gy.clone());
                self.acc(g, *b, gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (x, z) = (val(*a), val(*b));
                if self.req(*a) {
                    let d = gy.data.iter().zip(&z.data).map(|(p, q)| p * q).collect();
                    self.acc(g, *a, Tensor::from_vec(gy.rows, gy.cols, d));
                }
                if self.req(*b) {
                    let d = gy.data.iter().zip(&x.data).map(|(p, q)| p * q).collect();
                    self.acc(g, *b, Tensor::from_vec(gy.rows, gy.cols, d));
                }
            }
            Op::Scale(a, s) => self.acc(g, *a, gy.map(|v| v * s)),
            Op::Relu(a) => {
                let d = gy.data.iter().zip(&val(*a).data).map(|(p, x)| if *x > 0.0 { *p } else { 0.0 }).collect();
                self.acc(g, *a, Tensor::from_vec(gy.rows, gy.cols, d));
            }
            Op::Sin(a) => {
                let d = gy.data.iter().zip(&val(*a).data).map(|(p, x)| p * x.cos()).collect();
                self.acc(g, *a, Tensor::from_vec(gy.rows, gy.cols, d));
            }
            Op::Cos(a) => {
                let d = gy.data.iter().zip(&val(*a).data).map(|(p, x)| -p * x.sin()).collect();
                self.acc(g, *a, Tensor::from_vec(gy.rows, gy.cols, d));
            }
            Op::Sqrt(a) => {
                let d = gy
                    .data
                    .iter()
                    .zip(&y.data)
                    .zip(&val(*a).data)
                    .map(|((p, s), x)| if *x < 0.0 { 0.0 } else { 0.5 * p / s })
                    .collect();
                self.acc(g, *a, Tensor::from_vec(gy.rows, gy.cols, d));
            }
            Op::Norm { x, inv_std, batch } => {
                let (n, c) = (gy.rows, gy.cols);
                let mut dx = Tensor::zeros(n, c);
                if *batch {
                    // dx = inv_std / N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                    let mut sum = vec![0.0; c];
                    let mut dot = vec![0.0; c];
                    for i in 0..n {
                        for j in 0..c {
                            sum[j] += gy.data[i * c + j];
                            dot[j] += gy.data[i * c + j] * y.data[i * c + j];
                        }
                    }
                    let nf = n as f64;
                    for i in 0..n {
                        for j in 0..c {
                            let k = i * c + j;
                            dx.data[k] = inv_std[j] / nf * (nf * gy.data[k] - sum[j] - y.data[k] * dot[j]);
                        }
                    }
                } else {
                    for i in 0..n {
                        for j in 0..c {
                            dx.data[i * c + j] = gy.data[i * c + j] * inv_std[j];
                        }
                    }
                }
                self.acc(g, *x, dx);
            }
            Op::SegmentMax { x, argmax } => {
                let xs = val(*x);
                let c = xs.cols;
                let mut dx = Tensor::zeros(xs.rows, c);
                for (k, &row) in argmax.iter().enumerate() {
                    dx.data[row * c + k % c] += gy.data[k];
                }
                self.acc(g, *x, dx);
            }
            Op::SegmentMean { x, offsets } => {
                let xs = val(*x);
                let c = xs.cols;
                let mut dx = Tensor::zeros(xs.rows, c);
                for s in 0..offsets.len() - 1 {
                    let k = (offsets[s + 1] - offsets[s]) as f64;
                    for i in offsets[s]..offsets[s + 1] {
                        for j in 0..c {
                            dx.data[i * c + j] = gy.data[s * c + j] / k;
                        }
                    }
                }
                self.acc(g, *x, dx);
            }
            Op::Gather { x, idx } => {
                let xs = val(*x);
                let c = xs.cols;
                let mut dx = Tensor::zeros(xs.rows, c);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx.data[i * c + j] += gy.data[r * c + j];
                    }
                }
                self.acc(g, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut lo = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.req(p) {
                        let mut d = Vec::with_capacity(gy.rows * w);
                        for i in 0..gy.rows {
                            d.extend_from_slice(&gy.row(i)[lo..lo + w]);
                        }
                        self.acc(g, p, Tensor::from_vec(gy.rows, w, d));
                    }
                    lo += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = gy.cols;
                let mut lo = 0;
                for &p in parts {
                    let n = self.shape(p)[0];
                    if self.req(p) {
                        self.acc(g, p, Tensor::from_vec(n, c, gy.data[lo * c..(lo + n) * c].to_vec()));
                    }
                    lo += n;
                }
            }
            Op::SliceCols { x, lo } => {
                let xs = val(*x);
                let mut dx = Tensor::zeros(xs.rows, xs.cols);
                for i in 0..gy.rows {
                    for j in 0..gy.cols {
                        dx.data[i * xs.cols + lo + j] = gy.data[i * gy.cols + j];
                    }
                }
                self.acc(g, *x, dx);
            }
            Op::CrossEntropy { x, labels, probs } => {
                let c = val(*x).cols;
                let mut dx = Tensor::from_vec(gy.rows, c, probs.clone());
                for (i, &l) in labels.iter().enumerate() {
                    dx.data[i * c + l] -= 1.0;
                    for j in 0..c {
                        dx.data[i * c + j] *= gy.data[i];
                    }
                }
                self.acc(g, *x, dx);
            }
            Op::Huber { x, delta } => {
                let d = gy.data.iter().zip(&val(*x).data).map(|(p, v)| p * v.clamp(-delta, *delta)).collect();
                self.acc(g, *x, Tensor::from_vec(gy.rows, gy.cols, d));
            }
            Op::RowMean(x) => {
                let xs = val(*x);
                let c = xs.cols;
                let mut dx = Tensor::zeros(xs.rows, c);
                for i in 0..xs.rows {
                    for j in 0..c {
                        dx.data[i * c + j] = gy.data[i] / c as f64;
                    }
                }
                self.acc(g, *x, dx);
            }
            Op::Sum(x) => {
                let s = self.shape(*x);
                self.acc(g, *x, Tensor::filled(s[0], s[1], gy.item()));
            }
            Op::Mean(x) => {
                let s = self.shape(*x);
                self.acc(g, *x, Tensor::filled(s[0], s[1], gy.item() / (s[0] * s[1]) as f64));
            }
        }
    }
}

/// Folds recorded batch statistics into the running buffers.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) {
    for u in updates {
        for (suffix, batch) in [("rm", &u.mean), ("rv", &u.var)] {
            if let Some(t) = store.get_mut(&format!("{}.{suffix}", u.prefix)) {
                for (r, b) in t.data.iter_mut().zip(batch.iter()) {
                    *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * b;
                }
            }
        }
    }
}
