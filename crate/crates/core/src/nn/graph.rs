//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes a node holding
//! its forward value; [`Graph::backward`] walks the tape in reverse from a
//! scalar loss. Tensors are interpreted as `[rows, cols]` matrices where
//! `rows` is the leading (batch) dimension, except where an operation states
//! otherwise.

use std::sync::Arc;

use super::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Tensor),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SubCol(Var, Var),
    GatherCols(Var, Arc<[usize]>),
    ScatterCols(Var, Arc<[usize]>),
    GatherPerRow(Var, Vec<usize>),
    ExpandChunks { mask: Var, channels: usize, chunk: usize },
    StraightThrough(Var),
    Conv1d(Box<ConvCache>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SoftmaxXent { logits: Var, targets: Tensor, temperature: f64, probs: Tensor },
    Softmax { x: Var, temperature: f64 },
    Mean(Var),
    Sum(Var),
}

struct ConvCache {
    x: Var,
    w: Var,
    b: Var,
    cin: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    t_out: usize,
    cols: Vec<f64>,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of differentiable operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when no gradient reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.data().iter().all(|v| !v.is_nan()), "NaN produced on tape");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is collected by [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), k, 1, bv.data(), n, 1, 0.0, &mut out, n, 1);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), ng)
    }

    /// `x[r, c] + b[c]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.cols();
        assert_eq!(bv.len(), c, "bias length mismatch");
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddRow(x, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    /// `x + c` for a constant tensor `c`.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Var {
        let out = self.value(x).zip_map(c, |a, b| a + b);
        let ng = self.ng(x);
        self.push(out, Op::AddConst(x), ng)
    }

    /// `x ⊙ c` for a constant tensor `c` (dropout masks, fixed gates).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        let out = self.value(x).zip_map(&c, |a, b| a * b);
        let ng = self.ng(x);
        self.push(out, Op::MulConst(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// `x[r, c] - col[r]` where `col` has one entry per row.
    pub fn sub_col(&mut self, x: Var, col: Var) -> Var {
        let (xv, cv) = (self.value(x), self.value(col));
        let c = xv.cols();
        assert_eq!(cv.len(), xv.rows(), "column vector length mismatch");
        let mut out = xv.clone();
        for (row, s) in out.data_mut().chunks_mut(c).zip(cv.data()) {
            for v in row {
                *v -= s;
            }
        }
        let ng = self.ng(x) || self.ng(col);
        self.push(out, Op::SubCol(x, col), ng)
    }

    /// `out[r, q] = x[r, idx[q]]`.
    pub fn gather_cols(&mut self, x: Var, idx: Arc<[usize]>) -> Var {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = &xv.data()[r * c..(r + 1) * c];
            out.extend(idx.iter().map(|&i| row[i]));
        }
        let ng = self.ng(x);
        self.push(Tensor::new(vec![rows, idx.len()], out), Op::GatherCols(x, idx), ng)
    }

    /// Places `x[r, q]` at column `idx[q]` of a zero `[rows, width]` matrix.
    /// Indices must be distinct.
    pub fn scatter_cols(&mut self, x: Var, idx: Arc<[usize]>, width: usize) -> Var {
        let xv = self.value(x);
        let (rows, c) = (xv.rows(), xv.cols());
        assert_eq!(c, idx.len(), "scatter index count mismatch");
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            for (q, &i) in idx.iter().enumerate() {
                out[r * width + i] = xv.data()[r * c + q];
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::new(vec![rows, width], out), Op::ScatterCols(x, idx), ng)
    }

    /// `out[r] = x[r, idx[r]]`, shape `[rows, 1]`.
    pub fn gather_per_row(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        assert_eq!(idx.len(), xv.rows());
        let out: Vec<f64> = idx.iter().enumerate().map(|(r, &i)| xv.data()[r * c + i]).collect();
        let ng = self.ng(x);
        self.push(Tensor::new(vec![idx.len(), 1], out), Op::GatherPerRow(x, idx), ng)
    }

    /// Broadcasts a per-chunk mask `[rows, n]` onto the channel-major feature
    /// layout `[rows, channels · n · chunk]`.
    pub fn expand_chunks(&mut self, mask: Var, channels: usize, chunk: usize) -> Var {
        let mv = self.value(mask);
        let (rows, n) = (mv.rows(), mv.cols());
        let width = channels * n * chunk;
        let mut out = vec![0.0; rows * width];
        for r in 0..rows {
            for c in 0..channels {
                for j in 0..n {
                    let v = mv.data()[r * n + j];
                    let base = r * width + c * n * chunk + j * chunk;
                    out[base..base + chunk].fill(v);
                }
            }
        }
        let ng = self.ng(mask);
        self.push(
            Tensor::new(vec![rows, width], out),
            Op::ExpandChunks { mask, channels, chunk },
            ng,
        )
    }

    /// Forward value `hard`, gradient routed unchanged to `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Var {
        assert_eq!(self.value(soft).shape(), hard.shape());
        let ng = self.ng(soft);
        self.push(hard, Op::StraightThrough(soft), ng)
    }

    /// 1-D convolution. `x` holds `[rows, cin · t_in]` in channel-major order,
    /// `w` is `[cout, cin · k]`, `b` is `[cout]`. Output is `[rows, cout · t_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, cin: usize, k: usize, stride: usize) -> Var {
        let xv = self.value(x);
        let rows = xv.rows();
        let t_in = xv.cols() / cin;
        assert_eq!(t_in * cin, xv.cols(), "conv input width not divisible by channels");
        assert!(t_in >= k, "conv kernel longer than input");
        let t_out = (t_in - k) / stride + 1;
        let wv = self.value(w);
        let cout = wv.rows();
        assert_eq!(wv.cols(), cin * k, "conv weight shape mismatch");
        let ck = cin * k;
        let mut cols = vec![0.0; rows * t_out * ck];
        let xd = xv.data();
        for r in 0..rows {
            let xr = &xd[r * cin * t_in..(r + 1) * cin * t_in];
            for t in 0..t_out {
                let dst = &mut cols[(r * t_out + t) * ck..(r * t_out + t + 1) * ck];
                for ci in 0..cin {
                    let src = &xr[ci * t_in + t * stride..ci * t_in + t * stride + k];
                    dst[ci * k..(ci + 1) * k].copy_from_slice(src);
                }
            }
        }
        let mut out = vec![0.0; rows * cout * t_out];
        let bv = self.value(b).data();
        for r in 0..rows {
            let o = &mut out[r * cout * t_out..(r + 1) * cout * t_out];
            for (co, chunk) in o.chunks_mut(t_out).enumerate() {
                chunk.fill(bv[co]);
            }
            // o viewed as [t_out, cout] with rs=1, cs=t_out.
            gemm(
                t_out,
                ck,
                cout,
                &cols[r * t_out * ck..(r + 1) * t_out * ck],
                ck,
                1,
                wv.data(),
                1,
                ck,
                1.0,
                o,
                1,
                t_out,
            );
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        let cache = ConvCache { x, w, b, cin, t_in, k, stride, t_out, cols };
        self.push(Tensor::new(vec![rows, cout * t_out], out), Op::Conv1d(Box::new(cache)), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let out = self.value(x).clone().reshaped(shape);
        let ng = self.ng(x);
        self.push(out, Op::Reshape(x), ng)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        let rows = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs.iter().map(|&v| self.value(v).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (&v, &w) in xs.iter().zip(&widths) {
            let vv = self.value(v);
            assert_eq!(vv.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(vv.row(r));
            }
            off += w;
        }
        let ng = xs.iter().any(|&v| self.ng(v));
        self.push(Tensor::new(vec![rows, total], out), Op::ConcatCols(xs.to_vec()), ng)
    }

    /// Mean over rows of `-Σ_c targets[r,c] · log softmax(logits[r] / T)_c`.
    /// `targets` rows may be soft distributions.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Tensor, temperature: f64) -> Var {
        let zv = self.value(logits);
        assert_eq!(zv.shape(), targets.shape(), "target shape mismatch");
        let probs = softmax_rows(zv, temperature);
        let c = zv.cols();
        let mut loss = 0.0;
        for r in 0..zv.rows() {
            let z = zv.row(r);
            let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
            let lse = max + z.iter().map(|&v| (v / temperature - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                let t = targets.data()[r * c + j];
                if t != 0.0 {
                    loss -= t * (z[j] / temperature - lse);
                }
            }
        }
        loss /= zv.rows() as f64;
        let ng = self.ng(logits);
        self.push(Tensor::scalar(loss), Op::SoftmaxXent { logits, targets, temperature, probs }, ng)
    }

    pub fn softmax(&mut self, x: Var, temperature: f64) -> Var {
        let out = softmax_rows(self.value(x), temperature);
        let ng = self.ng(x);
        self.push(out, Op::Softmax { x, temperature }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.sum() / xv.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(out), Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(out), Op::Sum(x), ng)
    }

    /// Gradients of the scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(g.reshaped(shape));
            }
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), n, 1, bv.data(), 1, n, 0.0, &mut da, k, 1);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da));
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), 1, k, g.data(), n, 1, 0.0, &mut db, n, 1);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db));
                }
            }
            Op::AddRow(x, b) => {
                if self.ng(*b) {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![c], db));
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * c)),
            Op::AddConst(x) => self.accumulate(grads, *x, g.clone()),
            Op::MulConst(x, c) => self.accumulate(grads, *x, g.zip_map(c, |a, b| a * b)),
            Op::Relu(x) => {
                let d = g.zip_map(&node.value, |gv, y| if y > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y));
                self.accumulate(grads, *x, d);
            }
            Op::SubCol(x, col) => {
                if self.ng(*col) {
                    let c = g.cols();
                    let d: Vec<f64> = g.data().chunks(c).map(|r| -r.iter().sum::<f64>()).collect();
                    self.accumulate(grads, *col, Tensor::new(vec![d.len(), 1], d));
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::GatherCols(x, idx) => {
                if self.ng(*x) {
                    let xv = self.value(*x);
                    let (rows, c) = (xv.rows(), xv.cols());
                    let mut d = vec![0.0; rows * c];
                    for r in 0..rows {
                        for (q, &j) in idx.iter().enumerate() {
                            d[r * c + j] += g.data()[r * idx.len() + q];
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![rows, c], d));
                }
            }
            Op::ScatterCols(x, idx) => {
                if self.ng(*x) {
                    let (rows, width) = (g.rows(), g.cols());
                    let mut d = Vec::with_capacity(rows * idx.len());
                    for r in 0..rows {
                        d.extend(idx.iter().map(|&j| g.data()[r * width + j]));
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![rows, idx.len()], d));
                }
            }
            Op::GatherPerRow(x, idx) => {
                if self.ng(*x) {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut d = vec![0.0; xv.len()];
                    for (r, &j) in idx.iter().enumerate() {
                        d[r * c + j] += g.data()[r];
                    }
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), d));
                }
            }
            Op::ExpandChunks { mask, channels, chunk } => {
                if self.ng(*mask) {
                    let mv = self.value(*mask);
                    let (rows, n) = (mv.rows(), mv.cols());
                    let width = channels * n * chunk;
                    let mut d = vec![0.0; rows * n];
                    for r in 0..rows {
                        for c in 0..*channels {
                            for j in 0..n {
                                let base = r * width + c * n * chunk + j * chunk;
                                d[r * n + j] += g.data()[base..base + chunk].iter().sum::<f64>();
                            }
                        }
                    }
                    self.accumulate(grads, *mask, Tensor::new(vec![rows, n], d));
                }
            }
            Op::StraightThrough(soft) => self.accumulate(grads, *soft, g.clone()),
            Op::Conv1d(cc) => self.conv_backward(cc, g, grads),
            Op::Reshape(x) => self.accumulate(grads, *x, g.clone()),
            Op::ConcatCols(xs) => {
                let (rows, total) = (g.rows(), g.cols());
                let mut off = 0;
                for &v in xs {
                    let w = self.value(v).cols();
                    if self.ng(v) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        self.accumulate(grads, v, Tensor::new(vec![rows, w], d));
                    }
                    off += w;
                }
            }
            Op::SoftmaxXent { logits, targets, temperature, probs } => {
                let rows = probs.rows() as f64;
                let s = g.item() / (temperature * rows);
                let d = probs.zip_map(targets, |p, t| (p - t) * s);
                self.accumulate(grads, *logits, d);
            }
            Op::Softmax { x, temperature } => {
                let y = &node.value;
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[r * c + j] = yr[j] * (gr[j] - dot) / temperature;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(shape, g.item() / n));
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(shape, g.item()));
            }
        }
    }

    fn conv_backward(&self, cc: &ConvCache, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let ConvCache { x, w, b, cin, t_in, k, stride, t_out, cols } = cc;
        let (cin, t_in, k, stride, t_out) = (*cin, *t_in, *k, *stride, *t_out);
        let wv = self.value(*w);
        let cout = wv.rows();
        let ck = cin * k;
        let rows = g.rows();
        let gd = g.data();
        if self.ng(*b) {
            let mut db = vec![0.0; cout];
            for r in 0..rows {
                for (co, d) in db.iter_mut().enumerate() {
                    let base = r * cout * t_out + co * t_out;
                    *d += gd[base..base + t_out].iter().sum::<f64>();
                }
            }
            self.accumulate(grads, *b, Tensor::new(vec![cout], db));
        }
        if self.ng(*w) {
            let mut dw = vec![0.0; cout * ck];
            for r in 0..rows {
                // dW[cout, ck] += dY_r^T[cout, t_out] · cols_r[t_out, ck]
                gemm(
                    cout,
                    t_out,
                    ck,
                    &gd[r * cout * t_out..(r + 1) * cout * t_out],
                    t_out,
                    1,
                    &cols[r * t_out * ck..(r + 1) * t_out * ck],
                    ck,
                    1,
                    1.0,
                    &mut dw,
                    ck,
                    1,
                );
            }
            self.accumulate(grads, *w, Tensor::new(vec![cout, ck], dw));
        }
        if self.ng(*x) {
            let mut dx = vec![0.0; rows * cin * t_in];
            let mut dcols = vec![0.0; t_out * ck];
            for r in 0..rows {
                // dcols[t_out, ck] = dY_r[t_out, cout] · W[cout, ck]
                gemm(
                    t_out,
                    cout,
                    ck,
                    &gd[r * cout * t_out..(r + 1) * cout * t_out],
                    1,
                    t_out,
                    wv.data(),
                    ck,
                    1,
                    0.0,
                    &mut dcols,
                    ck,
                    1,
                );
                let dxr = &mut dx[r * cin * t_in..(r + 1) * cin * t_in];
                for t in 0..t_out {
                    let src = &dcols[t * ck..(t + 1) * ck];
                    for ci in 0..cin {
                        let dst = &mut dxr[ci * t_in + t * stride..ci * t_in + t * stride + k];
                        for (d, s) in dst.iter_mut().zip(&src[ci * k..(ci + 1) * k]) {
                            *d += s;
                        }
                    }
                }
            }
            let shape = self.value(*x).shape().to_vec();
            self.accumulate(grads, *x, Tensor::new(shape, dx));
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise `softmax(x / temperature)`.
pub fn softmax_rows(x: &Tensor, temperature: f64) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v / temperature - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d(loss)/d(leaf) for a graph builder.
    fn check_grad(leaf: Tensor, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let x = g.leaf(leaf.clone());
        let loss = build(&mut g, x);
        let analytic = g.backward(loss).get_or_zeros(x, leaf.shape());
        let h = 1e-6;
        for i in 0..leaf.len() {
            let mut plus = leaf.clone();
            plus.data_mut()[i] += h;
            let mut minus = leaf.clone();
            minus.data_mut()[i] -= h;
            let eval = |t: Tensor| {
                let mut g = Graph::new();
                let x = g.leaf(t);
                let l = build(&mut g, x);
                g.value(l).item()
            };
            let fd = (eval(plus) - eval(minus)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + fd.abs()),
                "element {i}: finite difference {fd} vs analytic {a}"
            );
        }
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_tensor(&mut rng, vec![4, 3]);
        let b = rand_tensor(&mut rng, vec![3]);
        let x = rand_tensor(&mut rng, vec![5, 4]);
        check_grad(x.clone(), |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            let y = g.matmul(x, w);
            let y = g.add_row(y, b);
            let y = g.tanh(y);
            g.sum(y)
        });
        check_grad(w.clone(), |g, w| {
            let x = g.constant(x.clone());
            let y = g.matmul(x, w);
            let y = g.sigmoid(y);
            g.mean(y)
        });
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, vec![2, 2 * 11]);
        let w = rand_tensor(&mut rng, vec![3, 2 * 3]);
        let b = rand_tensor(&mut rng, vec![3]);
        let build_x = |w: Tensor, b: Tensor| {
            move |g: &mut Graph, x: Var| {
                let w = g.constant(w.clone());
                let b = g.constant(b.clone());
                let y = g.conv1d(x, w, b, 2, 3, 2);
                let y = g.tanh(y);
                g.sum(y)
            }
        };
        check_grad(x.clone(), build_x(w.clone(), b.clone()));
        check_grad(w.clone(), |g, w| {
            let x = g.constant(x.clone());
            let b = g.constant(b.clone());
            let y = g.conv1d(x, w, b, 2, 3, 2);
            let y = g.tanh(y);
            g.sum(y)
        });
        check_grad(b, |g, b| {
            let x = g.constant(x.clone());
            let w = g.constant(w.clone());
            let y = g.conv1d(x, w, b, 2, 3, 2);
            let y = g.tanh(y);
            g.sum(y)
        });
    }

    #[test]
    fn conv1d_forward_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (cin, t_in, k, stride, cout) = (2, 9, 3, 2, 2);
        let x = rand_tensor(&mut rng, vec![1, cin * t_in]);
        let w = rand_tensor(&mut rng, vec![cout, cin * k]);
        let b = rand_tensor(&mut rng, vec![cout]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv1d(xv, wv, bv, cin, k, stride);
        let t_out = (t_in - k) / stride + 1;
        for co in 0..cout {
            for t in 0..t_out {
                let mut s = b.data()[co];
                for ci in 0..cin {
                    for kk in 0..k {
                        s += w.data()[co * cin * k + ci * k + kk] * x.data()[ci * t_in + t * stride + kk];
                    }
                }
                assert!((g.value(y).data()[co * t_out + t] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_xent_and_softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = rand_tensor(&mut rng, vec![3, 2]);
        let targets = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.3, 0.7, 0.0, 1.0]);
        for temp in [1.0, 10.0] {
            check_grad(z.clone(), |g, z| g.softmax_cross_entropy(z, targets.clone(), temp));
        }
        check_grad(z, |g, z| {
            let p = g.softmax(z, 2.0);
            let p = g.gather_cols(p, Arc::from(vec![0]));
            let p = g.mul(p, p);
            g.sum(p)
        });
    }

    #[test]
    fn indexing_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, vec![2, 4]);
        check_grad(x.clone(), |g, x| {
            let a = g.gather_cols(x, Arc::from(vec![3, 0, 0]));
            let s = g.scatter_cols(a, Arc::from(vec![1, 4, 2]), 6);
            let t = g.tanh(s);
            let th = g.gather_per_row(x, vec![2, 1]);
            let u = g.sub_col(x, th);
            let u = g.sigmoid(u);
            let m = g.expand_chunks(u, 2, 3);
            let m = g.tanh(m);
            let c = g.concat_cols(&[t, m]);
            let c = g.mul(c, c);
            g.sum(c)
        });
    }

    #[test]
    fn straight_through_forwards_hard_and_backwards_soft() {
        let mut g = Graph::new();
        let s = g.leaf(Tensor::new(vec![1, 2], vec![0.3, 0.8]));
        let h = g.straight_through(s, Tensor::new(vec![1, 2], vec![0.0, 1.0]));
        assert_eq!(g.value(h).data(), &[0.0, 1.0]);
        let k = g.scale(h, 3.0);
        let l = g.sum(k);
        assert_eq!(g.backward(l).get(s).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn masked_inputs_receive_exact_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.mul_const(x, Tensor::new(vec![1, 4], vec![1.0, 0.0, 1.0, 0.0]));
        let y = g.tanh(y);
        let l = g.sum(y);
        let d = g.backward(l).get(x).unwrap().clone();
        assert_eq!(d.data()[1], 0.0);
        assert_eq!(d.data()[3], 0.0);
        assert!(d.data()[0] != 0.0);
    }
}
