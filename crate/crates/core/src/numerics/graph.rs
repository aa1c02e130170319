//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive application in evaluation order.
//! Node indices are therefore already a topological order, and
//! [`Graph::backward`] visits them in reverse exactly once, accumulating
//! adjoints additively into every input.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Gelu(usize),
    LayerNorm {
        x: usize,
        affine: Option<(usize, usize)>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        seq_len: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
        scale: f64,
    },
    SumSquares(usize),
    Sum(usize),
    DotConst(usize, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradient tape. Single-threaded by construction; separate graphs are
/// fully independent.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// Mean shifted by the first entry; exact for constant rows.
fn shifted_mean(row: &[f64]) -> f64 {
    row[0] + row.iter().map(|v| v - row[0]).sum::<f64>() / row.len() as f64
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn needs(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that participates in differentiation.
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self.check(v).expect("variable belongs to another graph");
        &self.nodes[i].value
    }

    /// `a[... × k] · b[k × n]`; leading axes of `a` are treated as rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if av.shape().is_empty() || bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, av.data(), bv.data(), &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.needs(&[ia, ib]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(ia, ib), rg))
    }

    /// Adds a bias vector to every last-axis row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let (xv, bv) = (&self.nodes[ix].value, &self.nodes[ib].value);
        if bv.len() != xv.cols() {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let c = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.needs(&[ix, ib]);
        Ok(self.push(out, Op::AddBias(ix, ib), rg))
    }

    fn binary_same_shape(&self, ia: usize, ib: usize, op: &'static str) -> Result<()> {
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if !av.same_shape(bv) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.binary_same_shape(ia, ib, "add")?;
        let mut out = self.nodes[ia].value.clone();
        out.add_assign(&self.nodes[ib].value);
        let rg = self.needs(&[ia, ib]);
        Ok(self.push(out, Op::Add(ia, ib), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.binary_same_shape(ia, ib, "mul")?;
        let mut out = self.nodes[ia].value.clone();
        for (o, b) in out.data_mut().iter_mut().zip(self.nodes[ib].value.data()) {
            *o *= b;
        }
        let rg = self.needs(&[ia, ib]);
        Ok(self.push(out, Op::Mul(ia, ib), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.scaled(s);
        let rg = self.needs(&[ia]);
        Ok(self.push(out, Op::Scale(ia, s), rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|v| v.max(0.0));
        let rg = self.needs(&[ia]);
        Ok(self.push(out, Op::Relu(ia), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(gelu);
        let rg = self.needs(&[ia]);
        Ok(self.push(out, Op::Gelu(ia), rg))
    }

    /// Normalizes every last-axis row to zero mean and unit (biased)
    /// variance, then applies `w ⊙ · + b` when `affine` is given.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>, eps: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let affine = match affine {
            Some((w, b)) => Some((self.check(w)?, self.check(b)?)),
            None => None,
        };
        let xv = &self.nodes[ix].value;
        let d = xv.cols();
        if let Some((iw, ib)) = affine {
            if self.nodes[iw].value.len() != d || self.nodes[ib].value.len() != d {
                return Err(Error::shape(
                    "layer_norm",
                    format!("affine params must have length {d}"),
                ));
            }
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = shifted_mean(row);
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let mut out = xhat.clone();
        if let Some((iw, ib)) = affine {
            let (w, b) = (self.nodes[iw].value.data(), self.nodes[ib].value.data());
            for row in out.chunks_mut(d) {
                for j in 0..d {
                    row[j] = row[j] * w[j] + b[j];
                }
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let mut inputs = vec![ix];
        if let Some((iw, ib)) = affine {
            inputs.extend([iw, ib]);
        }
        let rg = self.needs(&inputs);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: ix,
                affine,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention over independent blocks of
    /// `seq_len` consecutive rows. `q`, `k`, `v` are `[rows × d]` with
    /// `d` divisible by `heads`. No masking.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
    ) -> Result<Var> {
        let (iq, ik, iv) = (self.check(q)?, self.check(k)?, self.check(v)?);
        let (qv, kv, vv) = (
            &self.nodes[iq].value,
            &self.nodes[ik].value,
            &self.nodes[iv].value,
        );
        if !qv.same_shape(kv) || !qv.same_shape(vv) || qv.shape().len() != 2 {
            return Err(Error::shape("attention", "q, k, v must share a 2-D shape"));
        }
        let (rows, d) = (qv.rows(), qv.cols());
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_model {d} not divisible by {heads} heads"
            )));
        }
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(Error::shape(
                "attention",
                format!("{rows} rows not a multiple of seq_len {seq_len}"),
            ));
        }
        let t = seq_len;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let blocks = rows / t;
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut probs = vec![0.0; blocks * heads * t * t];
        let mut out = vec![0.0; rows * d];
        for b in 0..blocks {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                for i in 0..t {
                    let qi = &qd[(b * t + i) * d + h * dh..(b * t + i) * d + (h + 1) * dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..t {
                        let kj = &kd[(b * t + j) * d + h * dh..(b * t + j) * d + (h + 1) * dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        p[i * t + j] = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0;
                    for j in 0..t {
                        let e = (p[i * t + j] - max).exp();
                        p[i * t + j] = e;
                        z += e;
                    }
                    for j in 0..t {
                        p[i * t + j] /= z;
                    }
                    let orow = &mut out[(b * t + i) * d + h * dh..(b * t + i) * d + (h + 1) * dh];
                    for j in 0..t {
                        let w = p[i * t + j];
                        let vj = &vd[(b * t + j) * d + h * dh..(b * t + j) * d + (h + 1) * dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![rows, d], out)?;
        let rg = self.needs(&[iq, ik, iv]);
        Ok(self.push(
            out,
            Op::Attention {
                q: iq,
                k: ik,
                v: iv,
                seq_len,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Stacks rows `ids` of a 2-D table (embedding lookup, row selection).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let tv = &self.nodes[it].value;
        if tv.shape().len() != 2 || ids.is_empty() {
            return Err(Error::shape(
                "gather_rows",
                format!("table {:?}, {} ids", tv.shape(), ids.len()),
            ));
        }
        let (n, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row {id} out of range for {n} rows"),
                ));
            }
            out.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        let rg = self.needs(&[it]);
        Ok(self.push(
            out,
            Op::GatherRows {
                table: it,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax cross-entropy of each last-axis row of `logits` against its
    /// target class, reduced to a scalar.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        reduction: Reduction,
    ) -> Result<Var> {
        let il = self.check(logits)?;
        let lv = &self.nodes[il].value;
        let c = lv.cols();
        if c < 2 {
            return Err(Error::shape("cross_entropy", "need at least 2 classes"));
        }
        if lv.rows() != targets.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} rows vs {} targets", lv.rows(), targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::ClassOutOfRange {
                index: bad,
                num_classes: c,
            });
        }
        let mut probs = vec![0.0; lv.len()];
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            total += log_z - row[target];
            for (p, v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / targets.len() as f64,
        };
        let rg = self.needs(&[il]);
        Ok(self.push(
            Tensor::scalar(total * scale),
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            rg,
        ))
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value.data().iter().map(|v| v * v).sum();
        let rg = self.needs(&[ia]);
        Ok(self.push(Tensor::scalar(s), Op::SumSquares(ia), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value.data().iter().sum();
        let rg = self.needs(&[ia]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), rg))
    }

    /// Scalar `Σ a ⊙ c` against a constant tensor of the same shape.
    pub fn dot_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let ia = self.check(a)?;
        if !self.nodes[ia].value.same_shape(c) {
            return Err(Error::shape(
                "dot_const",
                format!("{:?} vs {:?}", self.nodes[ia].value.shape(), c.shape()),
            ));
        }
        let s = self.nodes[ia].value.dot(c);
        let rg = self.needs(&[ia]);
        Ok(self.push(Tensor::scalar(s), Op::DotConst(ia, c.clone()), rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        let shape = self.nodes[il].value.shape();
        if self.nodes[il].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.backward_with_seed(loss, &Tensor::full(shape, 1.0))
    }

    /// Reverse sweep seeded with an arbitrary output cotangent, i.e. a
    /// vector-Jacobian product.
    pub fn backward_with_seed(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let io = self.check(output)?;
        if !self.nodes[io].value.same_shape(seed) {
            return Err(Error::shape(
                "backward",
                format!(
                    "seed {:?} vs output {:?}",
                    seed.shape(),
                    self.nodes[io].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[io] = Some(seed.clone());
        for i in (0..=io).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Tensor>], idx: usize) -> Option<&'g mut [f64]> {
        if !self.nodes[idx].requires_grad {
            return None;
        }
        let slot = &mut grads[idx];
        if slot.is_none() {
            *slot = Some(Tensor::zeros_like(&self.nodes[idx].value));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.shape()[1]);
                if let Some(da) = self.accum(grads, *a) {
                    gemm_nt(m, n, k, gd, bv.data(), da, true);
                }
                if let Some(db) = self.accum(grads, *b) {
                    gemm_tn(k, m, n, av.data(), gd, db, true);
                }
            }
            Op::AddBias(x, b) => {
                if let Some(dx) = self.accum(grads, *x) {
                    dx.iter_mut().zip(gd).for_each(|(d, g)| *d += g);
                }
                let c = g.cols();
                if let Some(db) = self.accum(grads, *b) {
                    for row in gd.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Add(a, b) => {
                for idx in [*a, *b] {
                    if let Some(d) = self.accum(grads, idx) {
                        d.iter_mut().zip(gd).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                if let Some(da) = self.accum(grads, *a) {
                    for j in 0..da.len() {
                        da[j] += gd[j] * bv[j];
                    }
                }
                if let Some(db) = self.accum(grads, *b) {
                    for j in 0..db.len() {
                        db[j] += gd[j] * av[j];
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().zip(gd).for_each(|(d, g)| *d += s * g);
                }
            }
            Op::Relu(a) => {
                let x = self.nodes[*a].value.data();
                if let Some(da) = self.accum(grads, *a) {
                    for j in 0..da.len() {
                        if x[j] > 0.0 {
                            da[j] += gd[j];
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let x = self.nodes[*a].value.data();
                if let Some(da) = self.accum(grads, *a) {
                    for j in 0..da.len() {
                        da[j] += gd[j] * gelu_grad(x[j]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                affine,
                xhat,
                inv_std,
            } => {
                let d = g.cols();
                let mut dxhat = gd.to_vec();
                if let Some((w, b)) = affine {
                    let wv = self.nodes[*w].value.data();
                    if let Some(dw) = self.accum(grads, *w) {
                        for (grow, xrow) in gd.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                dw[j] += grow[j] * xrow[j];
                            }
                        }
                    }
                    if let Some(db) = self.accum(grads, *b) {
                        for grow in gd.chunks(d) {
                            db.iter_mut().zip(grow).for_each(|(d, g)| *d += g);
                        }
                    }
                    for row in dxhat.chunks_mut(d) {
                        row.iter_mut().zip(wv).for_each(|(r, w)| *r *= w);
                    }
                }
                if let Some(dx) = self.accum(grads, *x) {
                    for (r, (drow, xrow)) in dxhat.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mean_d = drow.iter().sum::<f64>() / d as f64;
                        let mean_dx = drow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>()
                            / d as f64;
                        let s = inv_std[r];
                        let out = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            out[j] += s * (drow[j] - mean_d - xrow[j] * mean_dx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *seq_len, *heads, probs, gd, grads),
            Op::GatherRows { table, ids } => {
                let d = g.cols();
                if let Some(dt) = self.accum(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &gd[r * d..(r + 1) * d];
                        dt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                let c = self.nodes[*logits].value.cols();
                let up = gd[0] * scale;
                if let Some(dl) = self.accum(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            dl[r * c + j] += up * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::SumSquares(a) => {
                let x = self.nodes[*a].value.data();
                if let Some(da) = self.accum(grads, *a) {
                    for j in 0..da.len() {
                        da[j] += 2.0 * gd[0] * x[j];
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::DotConst(a, c) => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut()
                        .zip(c.data())
                        .for_each(|(d, c)| *d += gd[0] * c);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: usize,
        k: usize,
        v: usize,
        t: usize,
        heads: usize,
        probs: &[f64],
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let qv = &self.nodes[q].value;
        let (rows, d) = (qv.rows(), qv.cols());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let blocks = rows / t;
        let (qd, kd, vd) = (
            qv.data(),
            self.nodes[k].value.data(),
            self.nodes[v].value.data(),
        );
        let mut dq = vec![0.0; rows * d];
        let mut dk = vec![0.0; rows * d];
        let mut dv = vec![0.0; rows * d];
        let mut dp = vec![0.0; t * t];
        let at = |r: usize, h: usize, e: usize| r * d + h * dh + e;
        for b in 0..blocks {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                // dV = Pᵀ G ; dP = G Vᵀ
                for i in 0..t {
                    for j in 0..t {
                        let pij = p[i * t + j];
                        let mut acc = 0.0;
                        for e in 0..dh {
                            let gi = gd[at(b * t + i, h, e)];
                            dv[at(b * t + j, h, e)] += pij * gi;
                            acc += gi * vd[at(b * t + j, h, e)];
                        }
                        dp[i * t + j] = acc;
                    }
                }
                // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                for i in 0..t {
                    let row_dot: f64 = (0..t).map(|j| dp[i * t + j] * p[i * t + j]).sum();
                    for j in 0..t {
                        dp[i * t + j] = p[i * t + j] * (dp[i * t + j] - row_dot) * scale;
                    }
                }
                for i in 0..t {
                    for j in 0..t {
                        let s = dp[i * t + j];
                        if s == 0.0 {
                            continue;
                        }
                        for e in 0..dh {
                            dq[at(b * t + i, h, e)] += s * kd[at(b * t + j, h, e)];
                            dk[at(b * t + j, h, e)] += s * qd[at(b * t + i, h, e)];
                        }
                    }
                }
            }
        }
        for (idx, contrib) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(dst) = self.accum(grads, idx) {
                dst.iter_mut().zip(&contrib).for_each(|(d, c)| *d += c);
            }
        }
    }
}

/// `cotangentᵀ·J` for the map that `build` records on a fresh graph,
/// linearized at `point`.
pub fn vjp<F>(build: F, point: &Tensor, cotangent: &Tensor) -> Result<Tensor>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.parameter(point.clone());
    let y = build(&mut g, x)?;
    let seed = cotangent
        .clone()
        .reshape(g.value(y).shape().to_vec())
        .map_err(|_| {
            Error::shape(
                "vjp",
                format!(
                    "cotangent {:?} vs output {:?}",
                    cotangent.shape(),
                    g.value(y).shape()
                ),
            )
        })?;
    g.backward_with_seed(y, &seed)?.wrt(&g, x)
}

impl Tensor {
    pub fn zeros_like(other: &Tensor) -> Tensor {
        Tensor::new(other.shape().to_vec(), vec![0.0; other.len()])
            .expect("shape of an existing tensor is valid")
    }
}

/// Adjoints produced by one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the output (or does not require gradients).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled when `v` is unreachable.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Result<Tensor> {
        let i = graph.check(v)?;
        if graph.id != self.graph {
            return Err(Error::NotOnTape);
        }
        Ok(match self.grads[i].as_ref() {
            Some(g) if graph.nodes[i].requires_grad => g.clone(),
            _ => Tensor::zeros_like(&graph.nodes[i].value),
        })
    }
}
