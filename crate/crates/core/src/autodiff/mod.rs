//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Graph`] records every operation in the order it is executed, so the
//! node vector is already topologically sorted. [`Graph::backward`] walks it
//! in exact reverse order once; a graph is single-use for differentiation.

mod kernels;
mod sgd;

pub use sgd::SgdState;

use kernels::{col2im_add, gemm, im2col, log_sum_exp, softmax_row, ConvGeometry};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Saturation margin keeping sigmoid outputs inside the open unit interval.
pub const SIGMOID_FLOOR: f64 = 1e-15;

/// Lower bound applied to probabilities inside binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

/// Tolerance on row sums accepted by [`Graph::entropy_rows`].
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Sigmoid(Var),
    Softmax(Var),
    GradReversal {
        x: Var,
        lambda: f64,
    },
    CrossEntropyRows {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    EntropyRows(Var),
    BceRows {
        p: Var,
        labels: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    WeightedMean {
        x: Var,
        weights: Vec<f64>,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Add(Var, Var),
    Mul(Var, Var),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Tape of operations plus their values and (after backward) gradients.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
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

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// A trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the backward root with respect to `v`, if one reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor shaped like `v`, zeros when nothing flowed back.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad buffer matches value shape"),
            None => Tensor::zeros(node.value.shape().to_vec()),
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::Dimension(format!(
                "dense: input {xs:?}, weights {ws:?}, bias {bs:?}"
            )));
        }
        let (batch, din, dout) = (xs[0], ws[0], ws[1]);
        let mut out = vec![0.0; batch * dout];
        gemm(
            batch,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            0.0,
        );
        let bias = self.value(b).data();
        for row in out.chunks_mut(dout) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(vec![batch, dout], out)?;
        Ok(self.push(value, rg, Op::Dense { x, w, b }))
    }

    /// Valid (unpadded) cross-correlation of `batch × cin × h × w` input
    /// with `cout × cin × k × k` kernels, plus an optional per-channel bias.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernels).to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || ks[2] != ks[3] {
            return Err(Error::Dimension(format!("conv2d: input {xs:?}, kernels {ks:?}")));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d: stride must be positive".into()));
        }
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ks[0], ks[2]);
        if k > h || k > w {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {k}×{k} larger than input {h}×{w}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::Dimension(format!(
                    "conv2d: bias {:?} for {cout} output channels",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeometry {
            cin,
            h,
            w,
            k,
            stride,
            oh: (h - k) / stride + 1,
            ow: (w - k) / stride + 1,
        };
        let (plen, npos) = (geom.patch_len(), geom.positions());
        let mut out = vec![0.0; batch * cout * npos];
        let mut cols = vec![0.0; plen * npos];
        let input = self.value(x).data();
        let kdata = self.value(kernels).data();
        let img_len = cin * h * w;
        for (bi, out_b) in out.chunks_mut(cout * npos).enumerate() {
            im2col(&input[bi * img_len..(bi + 1) * img_len], &geom, &mut cols);
            gemm(cout, plen, npos, kdata, false, &cols, false, out_b, 0.0);
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (co, plane) in out_b.chunks_mut(npos).enumerate() {
                    for o in plane {
                        *o += bv[co];
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(kernels) || bias.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![batch, cout, geom.oh, geom.ow], out)?;
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                x,
                k: kernels,
                bias,
                geom,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Relu(x)))
    }

    /// Non-overlapping max pooling over `window × window` blocks of a
    /// `batch × c × h × w` tensor. The window must tile the plane exactly.
    pub fn max_pool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || window == 0 || !xs[2].is_multiple_of(window) || !xs[3].is_multiple_of(window) {
            return Err(Error::Dimension(format!(
                "max_pool2d: window {window} does not tile {xs:?}"
            )));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / window, w / window);
        let input = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * window * w + ox * window;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * window + dy) * w + ox * window + dx;
                            if input[idx] > input[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(input[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![xs[0], xs[1], oh, ow], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::MaxPool { x, argmax }))
    }

    /// Spatial mean per channel: `batch × c × h × w` to `batch × c`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::Dimension(format!("global_avg_pool: input {xs:?}")));
        }
        let area = xs[2] * xs[3];
        let data = self
            .value(x)
            .data()
            .chunks(area)
            .map(|plane| plane.iter().sum::<f64>() / area as f64)
            .collect();
        let value = Tensor::new(vec![xs[0], xs[1]], data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::GlobalAvgPool(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&a| {
                let y = if a >= 0.0 {
                    1.0 / (1.0 + (-a).exp())
                } else {
                    let e = a.exp();
                    e / (1.0 + e)
                };
                y.clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
            })
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Sigmoid(x)))
    }

    /// Row-wise softmax of a `batch × classes` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::Dimension(format!("softmax: input {xs:?}")));
        }
        let mut out = vec![0.0; xs[0] * xs[1]];
        for (row, o) in self.value(x).data().chunks(xs[1]).zip(out.chunks_mut(xs[1])) {
            softmax_row(row, o);
        }
        let value = Tensor::new(xs, out)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Softmax(x)))
    }

    /// Identity forward; the backward pass multiplies the gradient by `-lambda`.
    pub fn gradient_reversal(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Parameter(format!(
                "gradient_reversal: lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let value = self.value(x).clone();
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::GradReversal { x, lambda }))
    }

    /// Per-row `-ln softmax(logits)[label]`, shape `[batch]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 || ls[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "cross_entropy: logits {ls:?} with {} labels",
                labels.len()
            )));
        }
        let classes = ls[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!("label {bad} outside [0, {classes})")));
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0; data.len()];
        let mut losses = Vec::with_capacity(labels.len());
        for ((row, p), &label) in data.chunks(classes).zip(probs.chunks_mut(classes)).zip(labels) {
            softmax_row(row, p);
            losses.push(log_sum_exp(row) - row[label]);
        }
        let value = Tensor::new(vec![labels.len()], losses)?;
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            rg,
            Op::CrossEntropyRows {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Batch mean of softmax cross-entropy.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let rows = self.cross_entropy_rows(logits, labels)?;
        self.mean(rows)
    }

    /// Per-row Shannon entropy `-Σ p ln p` (with `0 ln 0 = 0`) of
    /// probability rows, shape `[batch]`.
    pub fn entropy_rows(&mut self, probs: Var) -> Result<Var> {
        let ps = self.shape(probs).to_vec();
        if ps.len() != 2 {
            return Err(Error::Dimension(format!("entropy: input {ps:?}")));
        }
        let mut out = Vec::with_capacity(ps[0]);
        for (i, row) in self.value(probs).data().chunks(ps[1]).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Contract(format!(
                    "entropy: row {i} is not a probability vector (sum {sum})"
                )));
            }
            out.push(-row.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>());
        }
        let value = Tensor::new(vec![ps[0]], out)?;
        let rg = self.rg(probs);
        Ok(self.push(value, rg, Op::EntropyRows(probs)))
    }

    pub fn entropy_loss(&mut self, probs: Var) -> Result<Var> {
        let rows = self.entropy_rows(probs)?;
        self.mean(rows)
    }

    /// Per-row `-[d ln p + (1-d) ln(1-p)]` for a `batch × 1` probability
    /// column, with `p` clamped to `[1e-7, 1-1e-7]`.
    pub fn bce_rows(&mut self, prob: Var, labels: &[f64]) -> Result<Var> {
        let ps = self.shape(prob).to_vec();
        if ps.len() != 2 || ps[1] != 1 || ps[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "binary_cross_entropy: prob {ps:?} with {} labels",
                labels.len()
            )));
        }
        let out = self
            .value(prob)
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &d)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(d * p.ln() + (1.0 - d) * (1.0 - p).ln())
            })
            .collect();
        let value = Tensor::new(vec![ps[0]], out)?;
        let rg = self.rg(prob);
        Ok(self.push(
            value,
            rg,
            Op::BceRows {
                p: prob,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn binary_cross_entropy(&mut self, prob: Var, labels: &[f64]) -> Result<Var> {
        let rows = self.bce_rows(prob, labels)?;
        self.mean(rows)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), rg, Op::Sum(x)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(m), rg, Op::Mean(x)))
    }

    /// `Σ w_i x_i / n`. The weights are constants: no gradient flows into them.
    pub fn weighted_mean(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let v = self.value(x);
        if weights.len() != v.len() {
            return Err(Error::Dimension(format!(
                "weighted_mean: {} weights for {} values",
                weights.len(),
                v.len()
            )));
        }
        let m = v.data().iter().zip(weights).map(|(a, w)| w * a).sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(m),
            rg,
            Op::WeightedMean {
                x,
                weights: weights.to_vec(),
            },
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| c * a).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::Scale { x, c }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add: {:?} + {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    /// Elementwise product of same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "mul: {:?} * {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    /// Selects rows (leading-axis entries) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if rows.is_empty() {
            return Err(Error::Dimension("gather_rows: no rows selected".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= xs[0]) {
            return Err(Error::Index(format!("row {bad} of {}", xs[0])));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * src.len() / xs[0]);
        for &r in rows {
            data.extend_from_slice(src.row(r));
        }
        let mut shape = xs;
        shape[0] = rows.len();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, rg, Op::GatherRows { x, rows: rows.to_vec() }))
    }

    /// Back-propagates from the scalar `root`, filling gradients of every
    /// node that depends on a trainable leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward already ran on this graph; build a new forward pass".into(),
            ));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward root must be a scalar, got {:?}",
                self.shape(root)
            )));
        }
        self.backward_done = true;
        if !self.rg(root) {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
            None => node.grad = Some(contrib),
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let mut contribs: Vec<(Var, Vec<f64>)> = Vec::with_capacity(3);
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, din, dout) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
                if self.rg(*x) {
                    let mut dx = vec![0.0; batch * din];
                    gemm(batch, dout, din, g, false, wv.data(), true, &mut dx, 0.0);
                    contribs.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; din * dout];
                    gemm(din, batch, dout, xv.data(), true, g, false, &mut dw, 0.0);
                    contribs.push((*w, dw));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; dout];
                    for row in g.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                    contribs.push((*b, db));
                }
            }
            Op::Conv2d { x, k, bias, geom } => {
                let xv = self.value(*x);
                let kv = self.value(*k);
                let cout = kv.shape()[0];
                let (plen, npos) = (geom.patch_len(), geom.positions());
                let img_len = geom.cin * geom.h * geom.w;
                let need_x = self.rg(*x);
                let need_k = self.rg(*k);
                let mut dk = vec![0.0; if need_k { cout * plen } else { 0 }];
                let mut dx = vec![0.0; if need_x { xv.len() } else { 0 }];
                let mut cols = vec![0.0; plen * npos];
                for (bi, g_b) in g.chunks(cout * npos).enumerate() {
                    if need_k {
                        im2col(&xv.data()[bi * img_len..(bi + 1) * img_len], geom, &mut cols);
                        gemm(cout, npos, plen, g_b, false, &cols, true, &mut dk, 1.0);
                    }
                    if need_x {
                        gemm(plen, cout, npos, kv.data(), true, g_b, false, &mut cols, 0.0);
                        col2im_add(&cols, geom, &mut dx[bi * img_len..(bi + 1) * img_len]);
                    }
                }
                if need_x {
                    contribs.push((*x, dx));
                }
                if need_k {
                    contribs.push((*k, dk));
                }
                if let Some(b) = bias.filter(|b| self.rg(*b)) {
                    let mut db = vec![0.0; cout];
                    for g_b in g.chunks(cout * npos) {
                        for (co, plane) in g_b.chunks(npos).enumerate() {
                            db[co] += plane.iter().sum::<f64>();
                        }
                    }
                    contribs.push((b, db));
                }
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&a, &gi)| if a > 0.0 { gi } else { 0.0 })
                    .collect();
                contribs.push((*x, dx));
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&src, &gi) in argmax.iter().zip(g) {
                    dx[src] += gi;
                }
                contribs.push((*x, dx));
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let area = xs[2] * xs[3];
                let mut dx = Vec::with_capacity(self.value(*x).len());
                for &gi in g {
                    dx.extend(std::iter::repeat_n(gi / area as f64, area));
                }
                contribs.push((*x, dx));
            }
            Op::Sigmoid(x) => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| gi * y * (1.0 - y))
                    .collect();
                contribs.push((*x, dx));
            }
            Op::Softmax(x) => {
                let classes = node.value.shape()[1];
                let mut dx = vec![0.0; node.value.len()];
                for ((y, gr), d) in node
                    .value
                    .data()
                    .chunks(classes)
                    .zip(g.chunks(classes))
                    .zip(dx.chunks_mut(classes))
                {
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..classes {
                        d[j] = y[j] * (gr[j] - dot);
                    }
                }
                contribs.push((*x, dx));
            }
            Op::GradReversal { x, lambda } => {
                contribs.push((*x, g.iter().map(|gi| -lambda * gi).collect()));
            }
            Op::CrossEntropyRows { logits, labels, probs } => {
                let classes = probs.len() / labels.len();
                let mut dx = probs.clone();
                for (r, (row, &label)) in dx.chunks_mut(classes).zip(labels).enumerate() {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= g[r]);
                }
                contribs.push((*logits, dx));
            }
            Op::EntropyRows(p) => {
                let pv = self.value(*p);
                let classes = pv.shape()[1];
                let dx = pv
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(idx, &q)| -g[idx / classes] * (q.max(f64::MIN_POSITIVE).ln() + 1.0))
                    .collect();
                contribs.push((*p, dx));
            }
            Op::BceRows { p, labels } => {
                let dx = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(labels)
                    .zip(g)
                    .map(|((&q, &d), &gi)| {
                        let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        gi * (-d / q + (1.0 - d) / (1.0 - q))
                    })
                    .collect();
                contribs.push((*p, dx));
            }
            Op::Sum(x) => {
                contribs.push((*x, vec![g[0]; self.value(*x).len()]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                contribs.push((*x, vec![g[0] / n as f64; n]));
            }
            Op::WeightedMean { x, weights } => {
                let n = weights.len() as f64;
                contribs.push((*x, weights.iter().map(|w| g[0] * w / n).collect()));
            }
            Op::Scale { x, c } => {
                contribs.push((*x, g.iter().map(|gi| c * gi).collect()));
            }
            Op::Add(a, b) => {
                contribs.push((*a, g.to_vec()));
                contribs.push((*b, g.to_vec()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                contribs.push((*a, g.iter().zip(bv).map(|(gi, y)| gi * y).collect()));
                contribs.push((*b, g.iter().zip(av).map(|(gi, y)| gi * y).collect()));
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let width = xv.len() / xv.shape()[0];
                let mut dx = vec![0.0; xv.len()];
                for (gr, &r) in g.chunks(width).zip(rows) {
                    dx[r * width..(r + 1) * width]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(a, b)| *a += b);
                }
                contribs.push((*x, dx));
            }
        }
        for (v, c) in contribs {
            self.accumulate(v, c);
        }
    }
}
