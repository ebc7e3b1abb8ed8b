//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every differentiable op is a method on [`Tape`]. The forward pass runs
//! eagerly; when the tape is in training mode and an input requires a
//! gradient, the op pushes a node holding a backward closure. [`Tape::backward`]
//! replays the nodes in reverse, accumulating gradients on the input tensors.

use std::cell::RefCell;

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::rng::SplitRng;
use crate::scalar::{fl, Scalar};
use crate::tensor::Tensor;

/// Forward-pass mode. Training records backward nodes and applies dropout;
/// inference does neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Gradient propagation callback: receives the node's output gradient.
type Pull<F> = Box<dyn FnOnce(&[F])>;

struct Node<F: Scalar> {
    output: Tensor<F>,
    pull: Pull<F>,
}

pub struct Tape<F: Scalar> {
    nodes: RefCell<Vec<Node<F>>>,
    mode: Mode,
}

impl<F: Scalar> Tape<F> {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    fn should_record(&self, out: &Tensor<F>) -> bool {
        self.is_training() && out.requires_grad()
    }

    fn push(&self, output: &Tensor<F>, pull: impl FnOnce(&[F]) + 'static) {
        self.nodes.borrow_mut().push(Node {
            output: output.clone(),
            pull: Box::new(pull),
        });
    }

    /// Seed `loss` with gradient 1 and propagate back through every recorded
    /// node. Consumes the tape; gradients land on the input tensors.
    pub fn backward(self, loss: &Tensor<F>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        loss.accumulate_grad(&[F::one()]);
        let mut nodes = self.nodes.into_inner();
        while let Some(node) = nodes.pop() {
            if let Some(g) = node.output.grad() {
                (node.pull)(&g);
            }
        }
        Ok(())
    }

    // ── Elementwise ──

    pub fn add(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::op_output(data, a.shape(), a.requires_grad() || b.requires_grad());
        if self.should_record(&out) {
            let (ac, bc) = (a.clone(), b.clone());
            self.push(&out, move |g| {
                if ac.requires_grad() {
                    ac.accumulate_grad(g);
                }
                if bc.requires_grad() {
                    bc.accumulate_grad(g);
                }
            });
        }
        Ok(out)
    }

    pub fn mul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::op_output(data, a.shape(), a.requires_grad() || b.requires_grad());
        if self.should_record(&out) {
            let (ac, bc) = (a.clone(), b.clone());
            self.push(&out, move |g| {
                if ac.requires_grad() {
                    let da: Vec<F> = g.iter().zip(bc.data()).map(|(&gv, &y)| gv * y).collect();
                    ac.accumulate_grad(&da);
                }
                if bc.requires_grad() {
                    let db: Vec<F> = g.iter().zip(ac.data()).map(|(&gv, &x)| gv * x).collect();
                    bc.accumulate_grad(&db);
                }
            });
        }
        Ok(out)
    }

    pub fn scale(&self, x: &Tensor<F>, c: f64) -> Result<Tensor<F>> {
        let cf: F = fl(c);
        let data = x.data().iter().map(|&v| v * cf).collect();
        let out = Tensor::op_output(data, x.shape(), x.requires_grad());
        if self.should_record(&out) {
            let xc = x.clone();
            self.push(&out, move |g| {
                let dx: Vec<F> = g.iter().map(|&gv| gv * cf).collect();
                xc.accumulate_grad(&dx);
            });
        }
        Ok(out)
    }

    pub fn relu(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let data = x
            .data()
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        let out = Tensor::op_output(data, x.shape(), x.requires_grad());
        if self.should_record(&out) {
            let xc = x.clone();
            self.push(&out, move |g| {
                let dx: Vec<F> = g
                    .iter()
                    .zip(xc.data())
                    .map(|(&gv, &v)| if v > F::zero() { gv } else { F::zero() })
                    .collect();
                xc.accumulate_grad(&dx);
            });
        }
        Ok(out)
    }

    /// Inverted dropout: keeps each element with probability `1 - p` and
    /// rescales by `1/(1-p)`, so expectations match the identity. Outside
    /// training (or at `p = 0`) this returns the input tensor itself.
    pub fn dropout(&self, x: &Tensor<F>, p: f64, rng: &mut SplitRng) -> Result<Tensor<F>> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidProbability { p });
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x.clone());
        }
        let keep_scale: F = fl(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..x.numel())
            .map(|_| if rng.unit() < p { F::zero() } else { keep_scale })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::op_output(data, x.shape(), x.requires_grad());
        if self.should_record(&out) {
            let xc = x.clone();
            self.push(&out, move |g| {
                let dx: Vec<F> = g.iter().zip(&mask).map(|(&gv, &m)| gv * m).collect();
                xc.accumulate_grad(&dx);
            });
        }
        Ok(out)
    }

    // ── Linear algebra ──

    /// `[m,k] x [k,n] -> [m,n]`. Rows of the output are computed
    /// independently, so parallel execution is bit-identical to serial.
    pub fn matmul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        if a.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "matmul",
                expected: 2,
                shape: a.shape().to_vec(),
            });
        }
        if b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let data = matmul_nn(a.data(), b.data(), m, k, n);
        let out = Tensor::op_output(data, &[m, n], a.requires_grad() || b.requires_grad());
        if self.should_record(&out) {
            let (ac, bc) = (a.clone(), b.clone());
            self.push(&out, move |g| {
                if ac.requires_grad() {
                    ac.accumulate_grad(&matmul_nt(g, bc.data(), m, n, k));
                }
                if bc.requires_grad() {
                    bc.accumulate_grad(&matmul_tn(ac.data(), g, m, k, n));
                }
            });
        }
        Ok(out)
    }

    /// Broadcast `bias` of shape `[d]` over the last axis of `x`.
    pub fn add_bias(&self, x: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let d = *x.shape().last().ok_or(TensorError::RankMismatch {
            op: "add_bias",
            expected: 1,
            shape: x.shape().to_vec(),
        })?;
        if bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: x.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let bd = bias.data();
        let data = x
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(bd).map(|(&v, &b)| v + b))
            .collect();
        let out = Tensor::op_output(data, x.shape(), x.requires_grad() || bias.requires_grad());
        if self.should_record(&out) {
            let (xc, bc) = (x.clone(), bias.clone());
            self.push(&out, move |g| {
                if xc.requires_grad() {
                    xc.accumulate_grad(g);
                }
                if bc.requires_grad() {
                    let mut db = vec![F::zero(); d];
                    for row in g.chunks(d) {
                        for (acc, &gv) in db.iter_mut().zip(row) {
                            *acc = *acc + gv;
                        }
                    }
                    bc.accumulate_grad(&db);
                }
            });
        }
        Ok(out)
    }

    pub fn transpose(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        if x.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "transpose",
                expected: 2,
                shape: x.shape().to_vec(),
            });
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let xd = x.data();
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xd[i * c + j];
            }
        }
        let out = Tensor::op_output(data, &[c, r], x.requires_grad());
        if self.should_record(&out) {
            let xc = x.clone();
            self.push(&out, move |g| {
                let mut dx = vec![F::zero(); r * c];
                for j in 0..c {
                    for i in 0..r {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                xc.accumulate_grad(&dx);
            });
        }
        Ok(out)
    }

    pub fn reshape(&self, x: &Tensor<F>, shape: &[usize]) -> Result<Tensor<F>> {
        let expected: usize = shape.iter().product();
        if expected != x.numel() {
            return Err(TensorError::ShapeDataMismatch {
                shape: shape.to_vec(),
                expected,
                got: x.numel(),
            });
        }
        let out = Tensor::op_output(x.data().to_vec(), shape, x.requires_grad());
        if self.should_record(&out) {
            let xc = x.clone();
            self.push(&out, move |g| xc.accumulate_grad(g));
        }
        Ok(out)
    }

    // ── Slicing and concatenation (2-D) ──

    pub fn slice_rows(&self, x: &Tensor<F>, start: usize, end: usize) -> Result<Tensor<F>> {
        self.slice2d(x, start, end, /*axis=*/ 0)
    }

    pub fn slice_cols(&self, x: &Tensor<F>, start: usize, end: usize) -> Result<Tensor<F>> {
        self.slice2d(x, start, end, /*axis=*/ 1)
    }

    fn slice2d(&self, x: &Tensor<F>, start: usize, end: usize, axis: usize) -> Result<Tensor<F>> {
        let op = if axis == 0 { "slice_rows" } else { "slice_cols" };
        if x.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: x.shape().to_vec(),
            });
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let extent = if axis == 0 { r } else { c };
        if start >= end || end > extent {
            return Err(TensorError::RangeOutOfBounds {
                op,
                start,
                end,
                extent,
            });
        }
        let xd = x.data();
        let (out_shape, data): (Vec<usize>, Vec<F>) = if axis == 0 {
            (vec![end - start, c], xd[start * c..end * c].to_vec())
        } else {
            let mut d = Vec::with_capacity(r * (end - start));
            for i in 0..r {
                d.extend_from_slice(&xd[i * c + start..i * c + end]);
            }
            (vec![r, end - start], d)
        };
        let out = Tensor::op_output(data, &out_shape, x.requires_grad());
        if self.should_record(&out) {
            let xc = x.clone();
            self.push(&out, move |g| {
                let mut dx = vec![F::zero(); r * c];
                if axis == 0 {
                    dx[start * c..end * c].copy_from_slice(g);
                } else {
                    let w = end - start;
                    for i in 0..r {
                        dx[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                }
                xc.accumulate_grad(&dx);
            });
        }
        Ok(out)
    }

    pub fn concat_cols(&self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        self.concat2d(parts, /*axis=*/ 1)
    }

    pub fn concat_rows(&self, parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        self.concat2d(parts, /*axis=*/ 0)
    }

    fn concat2d(&self, parts: &[&Tensor<F>], axis: usize) -> Result<Tensor<F>> {
        let op = if axis == 0 { "concat_rows" } else { "concat_cols" };
        let first = parts.first().ok_or(TensorError::EmptyInput { op })?;
        for p in parts {
            if p.rank() != 2 {
                return Err(TensorError::RankMismatch {
                    op,
                    expected: 2,
                    shape: p.shape().to_vec(),
                });
            }
            if p.shape()[1 - axis] != first.shape()[1 - axis] {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let (out_shape, data) = if axis == 0 {
            let c = first.shape()[1];
            let mut d = Vec::with_capacity(total * c);
            for p in parts {
                d.extend_from_slice(p.data());
            }
            (vec![total, c], d)
        } else {
            let r = first.shape()[0];
            let mut d = Vec::with_capacity(r * total);
            for i in 0..r {
                for p in parts {
                    let w = p.shape()[1];
                    d.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
                }
            }
            (vec![r, total], d)
        };
        let requires = parts.iter().any(|p| p.requires_grad());
        let out = Tensor::op_output(data, &out_shape, requires);
        if self.should_record(&out) {
            let owned: Vec<Tensor<F>> = parts.iter().map(|&p| p.clone()).collect();
            self.push(&out, move |g| {
                if axis == 0 {
                    let c = owned[0].shape()[1];
                    let mut row0 = 0usize;
                    for p in &owned {
                        let rows = p.shape()[0];
                        if p.requires_grad() {
                            p.accumulate_grad(&g[row0 * c..(row0 + rows) * c]);
                        }
                        row0 += rows;
                    }
                } else {
                    let r = owned[0].shape()[0];
                    let mut col0 = 0usize;
                    for p in &owned {
                        let w = p.shape()[1];
                        if p.requires_grad() {
                            let mut dp = Vec::with_capacity(r * w);
                            for i in 0..r {
                                dp.extend_from_slice(&g[i * total + col0..i * total + col0 + w]);
                            }
                            p.accumulate_grad(&dp);
                        }
                        col0 += w;
                    }
                }
            });
        }
        Ok(out)
    }

    // ── Normalization and activations over the last axis ──

    /// Exp-normalize along `axis` with max-subtraction for stability.
    pub fn softmax(&self, x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
        if axis >= x.rank() {
            return Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let mid = x.shape()[axis];
        if mid == 0 {
            return Err(TensorError::EmptyInput { op: "softmax" });
        }
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let outer: usize = x.shape()[..axis].iter().product();
        let xd = x.data();
        let mut data = vec![F::zero(); x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * mid * inner + i;
                let mut max = F::neg_infinity();
                for j in 0..mid {
                    max = max.max(xd[base + j * inner]);
                }
                let mut sum = F::zero();
                for j in 0..mid {
                    let e = (xd[base + j * inner] - max).exp();
                    data[base + j * inner] = e;
                    sum = sum + e;
                }
                for j in 0..mid {
                    data[base + j * inner] = data[base + j * inner] / sum;
                }
            }
        }
        let out = Tensor::op_output(data, x.shape(), x.requires_grad());
        if self.should_record(&out) {
            let (xc, oc) = (x.clone(), out.clone());
            self.push(&out, move |g| {
                let y = oc.data();
                let mut dx = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * mid * inner + i;
                        let mut dot = F::zero();
                        for j in 0..mid {
                            dot = dot + g[base + j * inner] * y[base + j * inner];
                        }
                        for j in 0..mid {
                            let k = base + j * inner;
                            dx[k] = y[k] * (g[k] - dot);
                        }
                    }
                }
                xc.accumulate_grad(&dx);
            });
        }
        Ok(out)
    }

    pub fn log_softmax(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let d = self.last_axis(x, "log_softmax")?;
        let mut data = Vec::with_capacity(x.numel());
        for row in x.data().chunks(d) {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            data.extend(row.iter().map(|&v| v - lse));
        }
        let out = Tensor::op_output(data, x.shape(), x.requires_grad());
        if self.should_record(&out) {
            let (xc, oc) = (x.clone(), out.clone());
            self.push(&out, move |g| {
                let y = oc.data();
                let mut dx = vec![F::zero(); y.len()];
                for (r, (grow, yrow)) in g.chunks(d).zip(y.chunks(d)).enumerate() {
                    let gsum: F = grow.iter().cloned().sum();
                    for j in 0..d {
                        dx[r * d + j] = grow[j] - yrow[j].exp() * gsum;
                    }
                }
                xc.accumulate_grad(&dx);
            });
        }
        Ok(out)
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(
        &self,
        x: &Tensor<F>,
        gain: &Tensor<F>,
        bias: &Tensor<F>,
        eps: f64,
    ) -> Result<Tensor<F>> {
        let d = self.last_axis(x, "layer_norm")?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let epsf: F = fl(eps);
        let df: F = fl(d as f64);
        let (gd, bd) = (gain.data(), bias.data());
        let mut data = Vec::with_capacity(x.numel());
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_sigma = Vec::with_capacity(x.numel() / d);
        for row in x.data().chunks(d) {
            let mean = row.iter().cloned().sum::<F>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
            let inv = (var + epsf).sqrt().recip();
            inv_sigma.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                data.push(h * gd[j] + bd[j]);
            }
        }
        let out = Tensor::op_output(
            data,
            x.shape(),
            x.requires_grad() || gain.requires_grad() || bias.requires_grad(),
        );
        if self.should_record(&out) {
            let (xc, gc, bc) = (x.clone(), gain.clone(), bias.clone());
            self.push(&out, move |g| {
                let rows = g.len() / d;
                let gaind = gc.data();
                if xc.requires_grad() {
                    let mut dx = vec![F::zero(); g.len()];
                    for r in 0..rows {
                        let grow = &g[r * d..(r + 1) * d];
                        let hrow = &xhat[r * d..(r + 1) * d];
                        let dh: Vec<F> =
                            grow.iter().zip(gaind).map(|(&gv, &gn)| gv * gn).collect();
                        let mean_dh = dh.iter().cloned().sum::<F>() / df;
                        let mean_dh_h = dh
                            .iter()
                            .zip(hrow)
                            .map(|(&a, &h)| a * h)
                            .sum::<F>()
                            / df;
                        for j in 0..d {
                            dx[r * d + j] =
                                inv_sigma[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    xc.accumulate_grad(&dx);
                }
                if gc.requires_grad() {
                    let mut dgain = vec![F::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dgain[j] = dgain[j] + g[r * d + j] * xhat[r * d + j];
                        }
                    }
                    gc.accumulate_grad(&dgain);
                }
                if bc.requires_grad() {
                    let mut dbias = vec![F::zero(); d];
                    for row in g.chunks(d) {
                        for (acc, &gv) in dbias.iter_mut().zip(row) {
                            *acc = *acc + gv;
                        }
                    }
                    bc.accumulate_grad(&dbias);
                }
            });
        }
        Ok(out)
    }

    // ── Lookup and loss ──

    /// Gather rows of `table` (`[v, d]`) by token id, producing `[ids.len(), d]`.
    pub fn embedding_lookup(&self, table: &Tensor<F>, ids: &[u32]) -> Result<Tensor<F>> {
        if table.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "embedding_lookup",
                expected: 2,
                shape: table.shape().to_vec(),
            });
        }
        let (v, d) = (table.shape()[0], table.shape()[1]);
        for (pos, &id) in ids.iter().enumerate() {
            if id as usize >= v {
                return Err(TensorError::IdOutOfRange {
                    id,
                    position: pos,
                    rows: v,
                });
            }
        }
        let td = table.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let r = id as usize;
            data.extend_from_slice(&td[r * d..(r + 1) * d]);
        }
        let out = Tensor::op_output(data, &[ids.len(), d], table.requires_grad());
        if self.should_record(&out) {
            let tc = table.clone();
            let ids = ids.to_vec();
            self.push(&out, move |g| {
                let mut dt = vec![F::zero(); v * d];
                for (row, &id) in ids.iter().enumerate() {
                    let r = id as usize;
                    for j in 0..d {
                        dt[r * d + j] = dt[r * d + j] + g[row * d + j];
                    }
                }
                tc.accumulate_grad(&dt);
            });
        }
        Ok(out)
    }

    /// Mean label-smoothed cross entropy in nats over rows of `logits`
    /// (`[n, v]`). The target distribution places `1 - epsilon` on the gold
    /// class and spreads `epsilon` uniformly over the remaining `v - 1`.
    /// `epsilon = 0` gives plain cross entropy.
    pub fn cross_entropy(
        &self,
        logits: &Tensor<F>,
        targets: &[u32],
        epsilon: f64,
    ) -> Result<Tensor<F>> {
        if logits.rank() != 2 {
            return Err(TensorError::RankMismatch {
                op: "cross_entropy",
                expected: 2,
                shape: logits.shape().to_vec(),
            });
        }
        let (n, v) = (logits.shape()[0], logits.shape()[1]);
        if n == 0 || targets.len() != n {
            return Err(TensorError::EmptyInput {
                op: "cross_entropy",
            });
        }
        if !(0.0..1.0).contains(&epsilon) || (epsilon > 0.0 && v < 2) {
            return Err(TensorError::InvalidProbability { p: epsilon });
        }
        for (pos, &t) in targets.iter().enumerate() {
            if t as usize >= v {
                return Err(TensorError::TargetOutOfRange {
                    id: t,
                    position: pos,
                    classes: v,
                });
            }
        }
        let on: F = fl(1.0 - epsilon);
        let off: F = if epsilon > 0.0 {
            fl(epsilon / (v - 1) as f64)
        } else {
            F::zero()
        };
        let mut total = F::zero();
        for (row, &t) in logits.data().chunks(v).zip(targets) {
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln();
            let mut loss = F::zero();
            for (j, &x) in row.iter().enumerate() {
                let q = if j as u32 == t { on } else { off };
                if q != F::zero() {
                    loss = loss - q * (x - lse);
                }
            }
            total = total + loss;
        }
        let nf: F = fl(n as f64);
        let out = Tensor::op_output(vec![total / nf], &[1], logits.requires_grad());
        if self.should_record(&out) {
            let lc = logits.clone();
            let targets = targets.to_vec();
            self.push(&out, move |g| {
                let scale = g[0] / nf;
                let mut dl = vec![F::zero(); n * v];
                for (r, (row, &t)) in lc.data().chunks(v).zip(&targets).enumerate() {
                    let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
                    let exps: Vec<F> = row.iter().map(|&x| (x - max).exp()).collect();
                    let sum: F = exps.iter().cloned().sum();
                    for j in 0..v {
                        let p = exps[j] / sum;
                        let q = if j as u32 == t { on } else { off };
                        dl[r * v + j] = (p - q) * scale;
                    }
                }
                lc.accumulate_grad(&dl);
            });
        }
        Ok(out)
    }

    pub fn sum_all(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        if x.numel() == 0 {
            return Err(TensorError::EmptyInput { op: "sum_all" });
        }
        let total: F = x.data().iter().cloned().sum();
        let out = Tensor::op_output(vec![total], &[1], x.requires_grad());
        if self.should_record(&out) {
            let xc = x.clone();
            self.push(&out, move |g| {
                xc.accumulate_grad(&vec![g[0]; xc.numel()]);
            });
        }
        Ok(out)
    }

    fn last_axis(&self, x: &Tensor<F>, op: &'static str) -> Result<usize> {
        match x.shape().last() {
            Some(&d) if d > 0 => Ok(d),
            _ => Err(TensorError::EmptyInput { op }),
        }
    }
}

// ── Matmul kernels ──
//
// Each output row is produced by exactly one task with a fixed inner loop
// order, so results do not depend on the rayon worker count. Zero left-hand
// entries are skipped: a term with weight exactly 0 (e.g. a masked attention
// probability) then contributes nothing at all, keeping outputs bit-identical
// no matter what the masked values were.

const PAR_FLOPS: usize = 1 << 15;

fn for_each_row<F: Scalar>(
    out: &mut [F],
    width: usize,
    flops: usize,
    f: impl Fn(usize, &mut [F]) + Sync,
) {
    if flops >= PAR_FLOPS && out.len() > width {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        for (i, row) in out.chunks_mut(width).enumerate() {
            f(i, row);
        }
    }
}

/// `C[m,n] = A[m,k] . B[k,n]`
fn matmul_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for_each_row(&mut out, n, m * k * n, |i, row| {
        for l in 0..k {
            let av = a[i * k + l];
            if av != F::zero() {
                let brow = &b[l * n..(l + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        }
    });
    out
}

/// `C[m,k] = A[m,n] . B^T` with `B` stored as `[k,n]`
fn matmul_nt<F: Scalar>(a: &[F], b: &[F], m: usize, n: usize, k: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * k];
    for_each_row(&mut out, k, m * n * k, |i, row| {
        let arow = &a[i * n..(i + 1) * n];
        for (l, o) in row.iter_mut().enumerate() {
            let brow = &b[l * n..(l + 1) * n];
            let mut acc = F::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            *o = acc;
        }
    });
    out
}

/// `C[k,n] = A^T . G` with `A` stored as `[m,k]`, `G` as `[m,n]`
fn matmul_tn<F: Scalar>(a: &[F], g: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    for_each_row(&mut out, n, m * k * n, |l, row| {
        for i in 0..m {
            let av = a[i * k + l];
            if av != F::zero() {
                let grow = &g[i * n..(i + 1) * n];
                for (o, &gv) in row.iter_mut().zip(grow) {
                    *o = *o + av * gv;
                }
            }
        }
    });
    out
}
