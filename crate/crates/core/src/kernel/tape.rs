//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes are stored
//! in creation order, so the tape is topologically sorted by construction and
//! `backward` is a single reverse sweep.

use std::sync::Arc;

use super::sparse::Csr;
use super::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var, usize),
    Sum(Var),
    Mean(Var),
    SqDist(Var, Var),
    FrobeniusSq(Var),
    StopGrad,
    ConcatCols(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    NeighborMean(Var, Arc<Csr>),
    ScaleRowsByCol {
        x: Var,
        w: Var,
        col: usize,
    },
    GatherRows(Var, Vec<usize>),
    StraightThrough(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        rows: Vec<usize>,
        probs: Vec<f64>,
    },
    PairDot(Var, Vec<(usize, usize)>),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-feature statistics observed by a training-mode batch normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`]. Nodes off the path to the output
/// read as zero.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// `None` when no gradient reached the node.
    pub fn raw(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn need_matrix(t: &Tensor, op: &str) -> Result<()> {
    if !t.is_matrix() {
        return Err(Error::dim(format!("{op}: expected a matrix, got {:?}", t.shape())));
    }
    Ok(())
}

impl Tape {
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
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        need_matrix(av, "matmul_nt")?;
        need_matrix(bv, "matmul_nt")?;
        if av.cols() != bv.cols() {
            return Err(Error::dim(format!(
                "matmul_nt: {:?} times transpose of {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let value = Tensor::from_parts(vec![m, n], gemm_nt(av.data(), bv.data(), m, k, n));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMulNT(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Adds a bias row (shape `[c]` or `[1, c]`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        need_matrix(xv, "add_bias")?;
        if bv.numel() != xv.cols() {
            return Err(Error::dim(format!(
                "add_bias: bias of {} entries for {} columns",
                bv.numel(),
                xv.cols()
            )));
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(value, Op::AddBias(x, bias), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).map(|v| v * s);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, s), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    /// Softmax along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = softmax_along(self.value(x), axis)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Softmax(x, axis), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(value, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.numel() as f64);
        let ng = self.ng(x);
        self.push(value, Op::Mean(x), ng)
    }

    /// `Σ (a − b)²` as a scalar.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, "sq_dist")?;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s), Op::SqDist(a, b), ng))
    }

    pub fn frobenius_sq(&mut self, w: Var) -> Var {
        let s = self.value(w).data().iter().map(|x| x * x).sum();
        let ng = self.ng(w);
        self.push(Tensor::scalar(s), Op::FrobeniusSq(w), ng)
    }

    /// Stop-gradient marker: same forward value, never propagates gradient to
    /// the wrapped node.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::StopGrad, false)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        need_matrix(av, "concat_cols")?;
        need_matrix(bv, "concat_cols")?;
        if av.rows() != bv.rows() {
            return Err(Error::dim(format!(
                "concat_cols: {} rows vs {} rows",
                av.rows(),
                bv.rows()
            )));
        }
        let (r, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::from_parts(vec![r, ca + cb], data),
            Op::ConcatCols(a, b),
            ng,
        ))
    }

    /// Training-mode batch normalization over rows. Returns the output and the
    /// batch statistics (biased variance) so callers can update running
    /// estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        need_matrix(xv, "batch_norm")?;
        let (n, c) = (xv.rows(), xv.cols());
        let mut mean = vec![0.0; c];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let out = self.bn_apply(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Batch normalization with frozen statistics.
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        self.bn_apply(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        need_matrix(xv, "batch_norm")?;
        let c = xv.cols();
        if gv.numel() != c || bv.numel() != c || mean.len() != c || var.len() != c {
            return Err(Error::dim("batch_norm: per-feature parameter length mismatch"));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(gv.data()[j] * h + bv.data()[j]);
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            ng,
        ))
    }

    /// Mean of neighbor rows under a constant adjacency.
    pub fn neighbor_mean(&mut self, x: Var, adj: Arc<Csr>) -> Result<Var> {
        let xv = self.value(x);
        need_matrix(xv, "neighbor_mean")?;
        if xv.rows() != adj.n() {
            return Err(Error::dim(format!(
                "neighbor_mean: {} rows for a graph of {} nodes",
                xv.rows(),
                adj.n()
            )));
        }
        let c = xv.cols();
        let value = Tensor::from_parts(xv.shape().to_vec(), adj.mean_rows(xv.data(), c));
        let ng = self.ng(x);
        Ok(self.push(value, Op::NeighborMean(x, adj), ng))
    }

    /// Multiplies row `i` of `x` by `w[i, col]`.
    pub fn scale_rows_by_col(&mut self, x: Var, w: Var, col: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        need_matrix(xv, "scale_rows_by_col")?;
        need_matrix(wv, "scale_rows_by_col")?;
        if wv.rows() != xv.rows() || col >= wv.cols() {
            return Err(Error::dim("scale_rows_by_col: weight matrix does not match"));
        }
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for (i, row) in data.chunks_mut(c).enumerate() {
            let s = wv.get(i, col);
            row.iter_mut().for_each(|v| *v *= s);
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(value, Op::ScaleRowsByCol { x, w, col }, ng))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        need_matrix(xv, "gather_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::dim(format!("gather_rows: index {bad} out of range")));
        }
        let value = xv.select_rows(idx);
        let ng = self.ng(x);
        Ok(self.push(value, Op::GatherRows(x, idx.to_vec()), ng))
    }

    /// Straight-through estimator: forward value is `quantized` exactly,
    /// backward copies the output gradient to `u` unchanged.
    pub fn straight_through(&mut self, u: Var, quantized: Tensor) -> Result<Var> {
        same_shape(self.value(u), &quantized, "straight_through")?;
        let ng = self.ng(u);
        Ok(self.push(quantized, Op::StraightThrough(u), ng))
    }

    /// Mean softmax cross-entropy of `logits[rows[i]]` against `labels[i]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], rows: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        need_matrix(lv, "cross_entropy")?;
        if labels.len() != rows.len() || rows.is_empty() {
            return Err(Error::dim("cross_entropy: labels/rows length mismatch or empty"));
        }
        let c = lv.cols();
        let mut probs = Vec::with_capacity(rows.len() * c);
        let mut loss = 0.0;
        for (&r, &y) in rows.iter().zip(labels) {
            if y >= c || r >= lv.rows() {
                return Err(Error::dim("cross_entropy: label or row out of range"));
            }
            let row = lv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            loss += z.ln() + m - row[y];
            probs.extend(row.iter().map(|v| (v - m).exp() / z));
        }
        let value = Tensor::scalar(loss / rows.len() as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                rows: rows.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Inner products `⟨x[a], x[b]⟩` for each pair, as a `[p, 1]` column.
    pub fn pair_dot(&mut self, x: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let xv = self.value(x);
        need_matrix(xv, "pair_dot")?;
        if pairs.iter().any(|&(a, b)| a >= xv.rows() || b >= xv.rows()) {
            return Err(Error::dim("pair_dot: node index out of range"));
        }
        let data: Vec<f64> = pairs
            .iter()
            .map(|&(a, b)| xv.row(a).iter().zip(xv.row(b)).map(|(p, q)| p * q).sum())
            .collect();
        let value = Tensor::from_parts(vec![pairs.len(), 1], data);
        let ng = self.ng(x);
        Ok(self.push(value, Op::PairDot(x, pairs.to_vec()), ng))
    }

    /// Mean logistic loss of scores against 0/1 targets.
    pub fn bce_with_logits(&mut self, scores: Var, targets: &[f64]) -> Result<Var> {
        let sv = self.value(scores);
        if sv.numel() != targets.len() || targets.is_empty() {
            return Err(Error::dim("bce_with_logits: target count mismatch"));
        }
        let loss: f64 = sv
            .data()
            .iter()
            .zip(targets)
            .map(|(&s, &t)| s.max(0.0) - s * t + (-s.abs()).exp().ln_1p())
            .sum::<f64>()
            / targets.len() as f64;
        let ng = self.ng(scores);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits(scores, targets.to_vec()),
            ng,
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.value.shape(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        // Only requires-grad nodes carry gradients to the caller.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.ng(*a) {
                    let ga = gemm_nt(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.ng(*b) {
                    let gb = gemm_tn(av.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
                }
            }
            Op::MatMulNT(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.ng(*a) {
                    let ga = gemm(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                }
                if self.ng(*b) {
                    let gb = gemm_tn(g.data(), av.data(), m, n, k);
                    self.accumulate(grads, *b, Tensor::from_parts(vec![n, k], gb));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y)?);
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y)?);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.ng(*bias) {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    let shape = val(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::from_parts(shape, gb));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.map(|v| v * s)),
            Op::Relu(x) => {
                let gx = g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x, axis) => {
                let gx = softmax_backward(&node.value, g, *axis);
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let s = g.item();
                self.accumulate(grads, *x, Tensor::full(val(*x).shape(), s));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let s = g.item() / xv.numel() as f64;
                self.accumulate(grads, *x, Tensor::full(xv.shape(), s));
            }
            Op::SqDist(a, b) => {
                let s = g.item();
                let diff = val(*a).zip_map(val(*b), |x, y| 2.0 * s * (x - y))?;
                if self.ng(*b) {
                    self.accumulate(grads, *b, diff.map(|v| -v));
                }
                self.accumulate(grads, *a, diff);
            }
            Op::FrobeniusSq(w) => {
                let s = g.item();
                self.accumulate(grads, *w, val(*w).map(|v| 2.0 * s * v));
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (val(*a).cols(), val(*b).cols());
                let r = g.rows();
                let mut ga = Vec::with_capacity(r * ca);
                let mut gb = Vec::with_capacity(r * cb);
                for row in g.data().chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, Tensor::from_parts(vec![r, ca], ga));
                self.accumulate(grads, *b, Tensor::from_parts(vec![r, cb], gb));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let c = g.cols();
                let n = g.rows();
                let gamma_v = val(*gamma).data();
                if self.ng(*beta) || self.ng(*gamma) {
                    let mut gg = vec![0.0; c];
                    let mut gbeta = vec![0.0; c];
                    for (grow, hrow) in g.data().chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += grow[j] * hrow[j];
                            gbeta[j] += grow[j];
                        }
                    }
                    let gs = val(*gamma).shape().to_vec();
                    let bs = val(*beta).shape().to_vec();
                    self.accumulate(grads, *gamma, Tensor::from_parts(gs, gg));
                    self.accumulate(grads, *beta, Tensor::from_parts(bs, gbeta));
                }
                if self.ng(*x) {
                    let mut gx = vec![0.0; n * c];
                    if *batch_stats {
                        let mut sum_d = vec![0.0; c];
                        let mut sum_dh = vec![0.0; c];
                        for (grow, hrow) in g.data().chunks(c).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                let d = grow[j] * gamma_v[j];
                                sum_d[j] += d;
                                sum_dh[j] += d * hrow[j];
                            }
                        }
                        let nf = n as f64;
                        for i in 0..n {
                            for j in 0..c {
                                let d = g.data()[i * c + j] * gamma_v[j];
                                gx[i * c + j] = inv_std[j] / nf
                                    * (nf * d - sum_d[j] - xhat[i * c + j] * sum_dh[j]);
                            }
                        }
                    } else {
                        for i in 0..n {
                            for j in 0..c {
                                gx[i * c + j] = g.data()[i * c + j] * gamma_v[j] * inv_std[j];
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(vec![n, c], gx));
                }
            }
            Op::NeighborMean(x, adj) => {
                let c = g.cols();
                let gx = adj.mean_rows_adjoint(g.data(), c);
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), gx));
            }
            Op::ScaleRowsByCol { x, w, col } => {
                let (xv, wv) = (val(*x), val(*w));
                let c = xv.cols();
                if self.ng(*x) {
                    let mut gx = g.data().to_vec();
                    for (i, row) in gx.chunks_mut(c).enumerate() {
                        let s = wv.get(i, *col);
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), gx));
                }
                if self.ng(*w) {
                    let mut gw = Tensor::zeros(wv.shape());
                    for i in 0..xv.rows() {
                        let d: f64 = g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum();
                        gw.set(i, *col, d);
                    }
                    self.accumulate(grads, *w, gw);
                }
            }
            Op::GatherRows(x, idx) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.shape());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::StraightThrough(u) => self.accumulate(grads, *u, g.clone()),
            Op::CrossEntropy {
                logits,
                labels,
                rows,
                probs,
            } => {
                let lv = val(*logits);
                let c = lv.cols();
                let s = g.item() / rows.len() as f64;
                let mut gl = Tensor::zeros(lv.shape());
                for (k, (&r, &y)) in rows.iter().zip(labels).enumerate() {
                    let p = &probs[k * c..(k + 1) * c];
                    let grow = gl.row_mut(r);
                    for j in 0..c {
                        grow[j] += s * (p[j] - if j == y { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::PairDot(x, pairs) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.shape());
                for (k, &(a, b)) in pairs.iter().enumerate() {
                    let s = g.data()[k];
                    let (ra, rb) = (xv.row(a).to_vec(), xv.row(b).to_vec());
                    for (o, v) in gx.row_mut(a).iter_mut().zip(&rb) {
                        *o += s * v;
                    }
                    for (o, v) in gx.row_mut(b).iter_mut().zip(&ra) {
                        *o += s * v;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::BceWithLogits(sv, targets) => {
                let s = g.item() / targets.len() as f64;
                let scores = val(*sv);
                let gs: Vec<f64> = scores
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| s * (sigmoid(z) - t))
                    .collect();
                self.accumulate(grads, *sv, Tensor::from_parts(scores.shape().to_vec(), gs));
            }
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax along an axis, without recording.
pub fn softmax_along(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, stride) = slice_layout(x, axis)?;
    let mut out = vec![0.0; x.numel()];
    let d = x.data();
    for o in 0..outer {
        for s in 0..stride {
            let idx = |t: usize| o * len * stride + t * stride + s;
            let m = (0..len).map(|t| d[idx(t)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..len).map(|t| (d[idx(t)] - m).exp()).sum();
            for t in 0..len {
                out[idx(t)] = (d[idx(t)] - m).exp() / z;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Layout for iterating slices along `axis`: (outer count, slice length, stride).
fn slice_layout(x: &Tensor, axis: usize) -> Result<(usize, usize, usize)> {
    match (x.rank(), axis) {
        (1, 0) => Ok((1, x.numel(), 1)),
        (2, 1) => Ok((x.rows(), x.cols(), 1)),
        (2, 0) => Ok((1, x.rows(), x.cols())),
        _ => Err(Error::dim(format!(
            "softmax axis {axis} invalid for shape {:?}",
            x.shape()
        ))),
    }
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (outer, len, stride) = slice_layout(y, axis).expect("validated in forward");
    let mut out = vec![0.0; y.numel()];
    for o in 0..outer {
        for s in 0..stride {
            let idx = |t: usize| o * len * stride + t * stride + s;
            let dot: f64 = (0..len).map(|t| g.data()[idx(t)] * y.data()[idx(t)]).sum();
            for t in 0..len {
                out[idx(t)] = y.data()[idx(t)] * (g.data()[idx(t)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
    }

    #[test]
    fn stop_grad_blocks_wrapped_factor() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let s = t.stop_grad(x);
        let y = t.mul(s, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 3.0);
        assert!(g.raw(s).is_none());
    }

    #[test]
    fn non_scalar_backward_is_contract_error() {
        let mut t = Tape::new();
        let x = t.param(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn leaves_off_path_get_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.0));
        let unused = t.param(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let y = t.scale(x, 5.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
        assert_eq!(g.get(x).item(), 5.0);
    }

    #[test]
    fn softmax_examples() {
        let uniform = softmax_along(&Tensor::vector(vec![0.0; 3]).unwrap(), 0).unwrap();
        for &p in uniform.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = 1.7;
        let two = softmax_along(&Tensor::vector(vec![c, c + 2f64.ln()]).unwrap(), 0).unwrap();
        assert!((two.data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((two.data()[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_axis_zero_normalizes_columns() {
        let x = Tensor::matrix(2, 2, vec![0.0, 1.0, 2.0, -1.0]).unwrap();
        let y = softmax_along(&x, 0).unwrap();
        assert!((y.get(0, 0) + y.get(1, 0) - 1.0).abs() < 1e-12);
        assert!((y.get(0, 1) + y.get(1, 1) - 1.0).abs() < 1e-12);
        assert!(softmax_along(&x, 2).is_err());
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let b = t.constant(Tensor::matrix(2, 1, vec![1., 1.]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);
        let bad = t.constant(Tensor::matrix(3, 1, vec![1., 1., 1.]).unwrap());
        assert!(matches!(t.matmul(a, bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn straight_through_forward_is_exact() {
        let mut t = Tape::new();
        let u = t.param(Tensor::matrix(1, 2, vec![0.1 + 0.2, -0.7]).unwrap());
        let q = Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap();
        let st = t.straight_through(u, q.clone()).unwrap();
        assert_eq!(t.value(st), &q);
    }
}
