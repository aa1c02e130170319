//! Pure-forward sub-layers, generic over [`Scalar`] so the same code yields
//! plain values on `f64` and directional derivatives on [`Dual`].
//!
//! Activations are row-major `rows × d` slices; weights are row-major
//! `in × out` matrices applied as `x·W + b`.
//!
//! [`Dual`]: crate::numerics::Dual

use serde::{Deserialize, Serialize};

use super::config::Activation;
use crate::numerics::graph::{GELU_A, GELU_C};
use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub affine_enabled: bool,
    pub epsilon: f64,
}

impl LayerNormParams {
    /// `w = 1`, `b = 0` with the affine map still trainable.
    pub fn identity(d: usize, epsilon: f64) -> Self {
        Self {
            weight: Tensor::ones(&[d]),
            bias: Tensor::zeros(&[d]),
            affine_enabled: true,
            epsilon,
        }
    }

    /// Normalization only: `w ≡ 1`, `b ≡ 0`, not trainable.
    pub fn disabled(d: usize, epsilon: f64) -> Self {
        Self {
            affine_enabled: false,
            ..Self::identity(d, epsilon)
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    fn affine(&self) -> Option<(&[f64], &[f64])> {
        self.affine_enabled
            .then(|| (self.weight.data(), self.bias.data()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
    pub num_heads: usize,
}

impl AttentionWeights {
    pub fn zeros(d: usize, num_heads: usize) -> Self {
        let m = Tensor::zeros(&[d, d]);
        let b = Tensor::zeros(&[d]);
        Self {
            wq: m.clone(),
            wk: m.clone(),
            wv: m.clone(),
            wo: m,
            bq: b.clone(),
            bk: b.clone(),
            bv: b.clone(),
            bo: b,
            num_heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

impl FfnWeights {
    pub fn zeros(d: usize, hidden: usize, activation: Activation) -> Self {
        Self {
            w1: Tensor::zeros(&[d, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, d]),
            b2: Tensor::zeros(&[d]),
            activation,
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }
}

pub fn gelu<S: Scalar>(x: S) -> S {
    let inner = (x + x * x * x.scale(GELU_A)).scale(GELU_C);
    x.scale(0.5) * (S::from_f64(1.0) + inner.tanh())
}

pub fn activate<S: Scalar>(x: S, act: Activation) -> S {
    match act {
        Activation::Gelu => gelu(x),
        Activation::Relu => x.relu(),
    }
}

/// `x·W + b` for `x: rows × k`, `W: k × n`.
pub fn linear<S: Scalar>(x: &[S], k: usize, w: &[f64], b: &[f64]) -> Vec<S> {
    let n = b.len();
    debug_assert_eq!(w.len(), k * n);
    let rows = x.len() / k;
    let mut out = Vec::with_capacity(rows * n);
    for r in 0..rows {
        let xr = &x[r * k..(r + 1) * k];
        for j in 0..n {
            let mut acc = S::from_f64(b[j]);
            for p in 0..k {
                acc += xr[p].scale(w[p * n + j]);
            }
            out.push(acc);
        }
    }
    out
}

/// Per-row `(x−μ)/√(σ²+ε)`, then `w ⊙ · + b` when `affine` is given.
pub fn layer_norm_rows<S: Scalar>(
    x: &[S],
    d: usize,
    affine: Option<(&[f64], &[f64])>,
    eps: f64,
) -> Vec<S> {
    let inv_d = 1.0 / d as f64;
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        // Shifted by the first entry so a constant row centers to exact zeros.
        let mut dev = S::zero();
        for &v in row {
            dev += v - row[0];
        }
        let mean = row[0] + dev.scale(inv_d);
        let mut var = S::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        let inv_std = S::from_f64(1.0) / (var.scale(inv_d) + S::from_f64(eps)).sqrt();
        for (j, &v) in row.iter().enumerate() {
            let n = (v - mean) * inv_std;
            out.push(match affine {
                Some((w, b)) => n.scale(w[j]) + S::from_f64(b[j]),
                None => n,
            });
        }
    }
    out
}

/// Multi-head attention over one sequence `x: t × d`.
pub fn mhsa_rows<S: Scalar>(x: &[S], d: usize, w: &AttentionWeights) -> Vec<S> {
    let t = x.len() / d;
    let h = w.num_heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(x, d, w.wq.data(), w.bq.data());
    let k = linear(x, d, w.wk.data(), w.bk.data());
    let v = linear(x, d, w.wv.data(), w.bv.data());
    let mut o = vec![S::zero(); t * d];
    let mut p = vec![S::zero(); t];
    for head in 0..h {
        let off = head * dh;
        for i in 0..t {
            let mut max = f64::NEG_INFINITY;
            for j in 0..t {
                let mut s = S::zero();
                for e in 0..dh {
                    s += q[i * d + off + e] * k[j * d + off + e];
                }
                p[j] = s.scale(scale);
                max = max.max(p[j].re());
            }
            let mut z = S::zero();
            for pj in p.iter_mut() {
                *pj = (*pj - S::from_f64(max)).exp();
                z += *pj;
            }
            for j in 0..t {
                let a = p[j] / z;
                for e in 0..dh {
                    o[i * d + off + e] += a * v[j * d + off + e];
                }
            }
        }
    }
    linear(&o, d, w.wo.data(), w.bo.data())
}

pub fn ffn_rows<S: Scalar>(x: &[S], d: usize, w: &FfnWeights) -> Vec<S> {
    let hdn: Vec<S> = linear(x, d, w.w1.data(), w.b1.data())
        .into_iter()
        .map(|v| activate(v, w.activation))
        .collect();
    linear(&hdn, w.hidden(), w.w2.data(), w.b2.data())
}

fn check_cols(op: &'static str, x: &Tensor, d: usize) -> Result<()> {
    if x.shape().is_empty() || x.cols() != d {
        return Err(Error::shape(
            op,
            format!("input {:?} needs last extent {d}", x.shape()),
        ));
    }
    Ok(())
}

pub fn layer_norm_forward(x: &Tensor, params: &LayerNormParams) -> Result<Tensor> {
    let d = params.dim();
    check_cols("layer_norm", x, d)?;
    let out = layer_norm_rows(x.data(), d, params.affine(), params.epsilon);
    Tensor::new(x.shape().to_vec(), out)
}

/// Attention over a single `T × d` sequence.
pub fn mhsa_forward(x: &Tensor, w: &AttentionWeights) -> Result<Tensor> {
    let d = w.dim();
    if w.num_heads == 0 || d % w.num_heads != 0 {
        return Err(Error::InvalidConfig(format!(
            "d_model {d} not divisible by {} heads",
            w.num_heads
        )));
    }
    check_cols("mhsa", x, d)?;
    if x.shape().len() != 2 {
        return Err(Error::shape("mhsa", format!("expected T x d, got {:?}", x.shape())));
    }
    Tensor::new(x.shape().to_vec(), mhsa_rows(x.data(), d, w))
}

pub fn ffn_forward(x: &Tensor, w: &FfnWeights) -> Result<Tensor> {
    let d = w.dim();
    check_cols("ffn", x, d)?;
    Tensor::new(x.shape().to_vec(), ffn_rows(x.data(), d, w))
}
