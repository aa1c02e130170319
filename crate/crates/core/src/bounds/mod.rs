//! Upper bounds on the gradient norm at LayerNorm inputs, built from the
//! head gradient, spectral norms of sub-layer Jacobians and (Post-LN) the
//! variance of sub-layer outputs.
//!
//! With `s(P) = ‖∂L/∂y_N‖₂`, `F_j`, `M_j` the FFN / MHSA spectral norms of
//! layer `j` and `V^F_j = |1−√Var(FFN(x_j'))|`, `V^M_j = |1−√Var(MHSA(x_j))|`:
//!
//! - Post-LN, LN1 at `i`: `s(P) · Π_{j≥i} (1+F_j) / (V^F_j V^M_j) · Π_{j>i} (1+M_j)`
//! - Post-LN, LN2 at `i`: `s(P) · Π_{j≥i} 1/V^F_j · Π_{j>i} (1+F_j)(1+M_j)/V^M_j`
//! - Pre-LN, LN1 at `i`: `s(P) · Π_{j≥i} (1+F̃_j)(1+M̃_j)`
//! - Pre-LN, LN2 at `i`: `s(P) · Π_{j≥i} (1+F̃_j) · Π_{j>i} (1+M̃_j)`
//!
//! where `F̃`, `M̃` are the spectral norms of `FFN∘LN₂` and `MHSA∘LN₁`.

use serde::{Deserialize, Serialize};

use crate::model::layers::{ffn_rows, layer_norm_rows, mhsa_rows};
use crate::model::transformer::{ffn, mhsa, BlockSpec, BlockVars};
use crate::model::{AblationSpec, Activation, LnSite, Model, ModelConfig, SiteId, Variant};
use crate::numerics::graph::vjp;
use crate::numerics::rng::derive_seed;
use crate::numerics::{
    jvp, power_iteration_smax, Dual, Graph, PowerIterationOptions, Reduction, Scalar,
    SpectralEstimate, Tensor, Var,
};
use crate::Result;

/// Variances whose `|1−√Var|` falls below this make a bound undefined.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Exclusion band around `√Var = 1` for the variance condition.
pub const VARIANCE_BAND: f64 = 1e-6;
pub const MONOTONE_SLACK: f64 = 1e-9;
pub const VALIDITY_SLACK: f64 = 1e-2;

/// Random-init verification model: one position, ReLU, weights drawn at
/// `0.5/√d`. Embeddings at std 2 keep the first block's input variance
/// above 1, which the Post-LN bound assumes of every block input.
pub fn verification_config(variant: Variant, num_layers: usize, d_model: usize) -> ModelConfig {
    ModelConfig {
        variant,
        num_layers,
        d_model,
        num_heads: 2,
        ffn_hidden: 2 * d_model,
        vocab_size: 32,
        seq_len: 1,
        num_classes: 4,
        activation: Activation::Relu,
        ln_epsilon: 1e-5,
        init_std: 0.5 / (d_model as f64).sqrt(),
        embed_std: 2.0,
        ablation: AblationSpec::none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sublayer {
    Ffn,
    Mhsa,
    /// `FFN∘LN₂`.
    FfnLn2,
    /// `MHSA∘LN₁`.
    MhsaLn1,
}

/// Recorded activations and gradients of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    /// `x_j`, `T × d`.
    pub inputs: Vec<Tensor>,
    /// `x_j'`.
    pub mids: Vec<Tensor>,
    pub mhsa_out: Vec<Tensor>,
    pub ffn_out: Vec<Tensor>,
    /// `[‖g_LN1‖, ‖g_LN2‖]` per layer.
    pub measured: Vec<[f64; 2]>,
    /// `s(P)`.
    pub head_norm: f64,
}

fn hidden_values(g: &Graph, v: Var, d: usize) -> Tensor {
    let t = g.value(v).clone();
    let rows = t.len() / d;
    t.reshape(vec![rows, d]).expect("hidden state is rows × d")
}

/// Forward and backward pass of one sample under cross-entropy against
/// `label`.
pub fn trace_sample(model: &Model, tokens: &[u32], label: usize) -> Result<SampleTrace> {
    let d = model.config().d_model;
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let out = model.forward(&mut g, &bound, &[tokens])?;
    let loss = g.cross_entropy(out.logits, &[label], Reduction::Sum)?;
    let grads = g.backward(loss)?;
    let mut tr = SampleTrace {
        inputs: Vec::new(),
        mids: Vec::new(),
        mhsa_out: Vec::new(),
        ffn_out: Vec::new(),
        measured: Vec::new(),
        head_norm: grads.wrt(&g, out.final_hidden)?.norm_l2(),
    };
    for taps in &out.layers {
        tr.inputs.push(hidden_values(&g, taps.input, d));
        tr.mids.push(hidden_values(&g, taps.mid, d));
        tr.mhsa_out.push(hidden_values(&g, taps.mhsa_out, d));
        tr.ffn_out.push(hidden_values(&g, taps.ffn_out, d));
        tr.measured.push([
            grads.wrt(&g, taps.ln1_input)?.norm_l2(),
            grads.wrt(&g, taps.ln2_input)?.norm_l2(),
        ]);
    }
    Ok(tr)
}

/// `s(P) = ‖∂L/∂y_N‖₂`: the head is a row map, so its spectral norm is the
/// norm of that gradient.
pub fn head_jacobian_norm(model: &Model, tokens: &[u32], label: usize) -> Result<f64> {
    Ok(trace_sample(model, tokens, label)?.head_norm)
}

fn ln_affine(model: &Model, layer: usize, site: LnSite) -> Option<(Vec<f64>, Vec<f64>)> {
    let p = model.ln_params(SiteId { layer, site });
    p.affine_enabled
        .then(|| (p.weight.into_data(), p.bias.into_data()))
}

fn apply_sublayer<S: Scalar>(model: &Model, layer: usize, kind: Sublayer, x: &[S]) -> Vec<S> {
    let c = model.config();
    let d = c.d_model;
    let eps = c.ln_epsilon;
    match kind {
        Sublayer::Ffn => ffn_rows(x, d, &model.ffn_weights(layer)),
        Sublayer::Mhsa => mhsa_rows(x, d, &model.attention_weights(layer)),
        Sublayer::FfnLn2 => {
            let a = ln_affine(model, layer, LnSite::Ln2);
            let n = layer_norm_rows(x, d, a.as_ref().map(|(w, b)| (&w[..], &b[..])), eps);
            ffn_rows(&n, d, &model.ffn_weights(layer))
        }
        Sublayer::MhsaLn1 => {
            let a = ln_affine(model, layer, LnSite::Ln1);
            let n = layer_norm_rows(x, d, a.as_ref().map(|(w, b)| (&w[..], &b[..])), eps);
            mhsa_rows(&n, d, &model.attention_weights(layer))
        }
    }
}

fn record_sublayer(g: &mut Graph, model: &Model, layer: usize, kind: Sublayer, x: Var) -> Result<Var> {
    let c = model.config();
    let aw = model.attention_weights(layer);
    let fw = model.ffn_weights(layer);
    let mut k = |t: &Tensor| g.constant(t.clone());
    let ln1 = ln_affine(model, layer, LnSite::Ln1);
    let ln2 = ln_affine(model, layer, LnSite::Ln2);
    let pair = |p: Option<(Vec<f64>, Vec<f64>)>, k: &mut dyn FnMut(&Tensor) -> Var| {
        p.map(|(w, b)| (k(&Tensor::vector(w)), k(&Tensor::vector(b))))
    };
    let vars = BlockVars {
        ln1: pair(ln1, &mut k),
        ln2: pair(ln2, &mut k),
        wq: k(&aw.wq),
        wk: k(&aw.wk),
        wv: k(&aw.wv),
        wo: k(&aw.wo),
        bq: k(&aw.bq),
        bk: k(&aw.bk),
        bv: k(&aw.bv),
        bo: k(&aw.bo),
        w1: k(&fw.w1),
        b1: k(&fw.b1),
        w2: k(&fw.w2),
        b2: k(&fw.b2),
    };
    let spec = BlockSpec {
        seq_len: g.value(x).rows(),
        num_heads: c.num_heads,
        activation: c.activation,
        epsilon: c.ln_epsilon,
    };
    match kind {
        Sublayer::Ffn => ffn(g, &vars, &spec, x),
        Sublayer::Mhsa => mhsa(g, &vars, &spec, x),
        Sublayer::FfnLn2 => {
            let n = g.layer_norm(x, vars.ln2, spec.epsilon)?;
            ffn(g, &vars, &spec, n)
        }
        Sublayer::MhsaLn1 => {
            let n = g.layer_norm(x, vars.ln1, spec.epsilon)?;
            mhsa(g, &vars, &spec, n)
        }
    }
}

/// Value of a sub-layer map at a `T × d` point.
pub fn sublayer_value(model: &Model, layer: usize, kind: Sublayer, point: &Tensor) -> Result<Tensor> {
    Tensor::new(
        point.shape().to_vec(),
        apply_sublayer(model, layer, kind, point.data()),
    )
}

/// Spectral norm of the sub-layer Jacobian at `point` (`T × d`, flattened),
/// with forward products from dual numbers and adjoint products from the
/// gradient graph.
pub fn sublayer_jacobian_smax(
    model: &Model,
    layer: usize,
    kind: Sublayer,
    point: &Tensor,
    opts: &PowerIterationOptions,
) -> Result<SpectralEstimate> {
    let n = point.len();
    let shape = point.shape().to_vec();
    power_iteration_smax(
        |v| {
            let dir = Tensor::new(shape.clone(), v.to_vec())?;
            let map = |x: &[Dual]| apply_sublayer(model, layer, kind, x);
            Ok(jvp(map, point, &dir)?.into_data())
        },
        |u| {
            let cot = Tensor::new(shape.clone(), u.to_vec())?;
            let build = |g: &mut Graph, x: Var| record_sublayer(g, model, layer, kind, x);
            Ok(vjp(build, point, &cot)?.into_data())
        },
        n,
        n,
        opts,
    )
}

/// Biased variance over the last axis, per row.
pub fn row_variances(t: &Tensor) -> Vec<f64> {
    let d = t.cols();
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let m = row.iter().sum::<f64>() / d as f64;
            row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceCondition {
    /// `√Var ∈ [0, 2]`, outside the exclusion band around 1.
    Pass,
    Singular,
    OutOfRange,
}

pub fn variance_condition(var: f64) -> VarianceCondition {
    let s = var.sqrt();
    if (s - 1.0).abs() < VARIANCE_BAND {
        VarianceCondition::Singular
    } else if (0.0..=2.0).contains(&s) {
        VarianceCondition::Pass
    } else {
        VarianceCondition::OutOfRange
    }
}

fn worst(conds: impl Iterator<Item = VarianceCondition>) -> VarianceCondition {
    conds.fold(VarianceCondition::Pass, |acc, c| match (acc, c) {
        (VarianceCondition::Singular, _) | (_, VarianceCondition::Singular) => {
            VarianceCondition::Singular
        }
        (VarianceCondition::OutOfRange, _) | (_, VarianceCondition::OutOfRange) => {
            VarianceCondition::OutOfRange
        }
        _ => VarianceCondition::Pass,
    })
}

/// Per-layer factors entering the bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFactors {
    pub layer: usize,
    /// Post-LN: `FFN` at `x'`; Pre-LN: `FFN∘LN₂` at `x'`.
    pub ffn_smax: SpectralEstimate,
    /// Post-LN: `MHSA` at `x`; Pre-LN: `MHSA∘LN₁` at `x`.
    pub mhsa_smax: SpectralEstimate,
    /// Per-position `√Var(FFN(x'))`.
    pub ffn_sqrt_var: Vec<f64>,
    /// Per-position `√Var(MHSA(x))`.
    pub mhsa_sqrt_var: Vec<f64>,
    /// Minimum over positions of `|1 − √Var(FFN(x'))|`.
    pub ffn_var_term: f64,
    pub mhsa_var_term: f64,
    pub ffn_condition: VarianceCondition,
    pub mhsa_condition: VarianceCondition,
}

impl LayerFactors {
    pub fn condition_passes(&self) -> bool {
        self.ffn_condition == VarianceCondition::Pass
            && self.mhsa_condition == VarianceCondition::Pass
    }
}

fn var_term(sqrt_vars: &[f64]) -> f64 {
    sqrt_vars
        .iter()
        .map(|s| (1.0 - s).abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn layer_factors(
    model: &Model,
    trace: &SampleTrace,
    opts: &PowerIterationOptions,
) -> Result<Vec<LayerFactors>> {
    let (fk, mk) = match model.config().variant {
        Variant::PostLn => (Sublayer::Ffn, Sublayer::Mhsa),
        Variant::PreLn => (Sublayer::FfnLn2, Sublayer::MhsaLn1),
    };
    let mut out = Vec::with_capacity(trace.inputs.len());
    for j in 0..trace.inputs.len() {
        let layer = j + 1;
        let o = |tag: &str| PowerIterationOptions {
            seed: derive_seed(opts.seed, &format!("{tag}/{layer}")),
            ..*opts
        };
        let ffn_smax = sublayer_jacobian_smax(model, layer, fk, &trace.mids[j], &o("ffn"))?;
        let mhsa_smax = sublayer_jacobian_smax(model, layer, mk, &trace.inputs[j], &o("mhsa"))?;
        let fv: Vec<f64> = row_variances(&trace.ffn_out[j]).iter().map(|v| v.sqrt()).collect();
        let mv: Vec<f64> = row_variances(&trace.mhsa_out[j]).iter().map(|v| v.sqrt()).collect();
        out.push(LayerFactors {
            layer,
            ffn_smax,
            mhsa_smax,
            ffn_var_term: var_term(&fv),
            mhsa_var_term: var_term(&mv),
            ffn_condition: worst(fv.iter().map(|s| variance_condition(s * s))),
            mhsa_condition: worst(mv.iter().map(|s| variance_condition(s * s))),
            ffn_sqrt_var: fv,
            mhsa_sqrt_var: mv,
        });
    }
    Ok(out)
}

/// Post-LN bound at 1-based `layer`; `None` when a variance term is
/// singular.
pub fn post_ln_bound(head_norm: f64, factors: &[LayerFactors], layer: usize, site: LnSite) -> Option<f64> {
    let mut b = head_norm;
    for f in &factors[layer - 1..] {
        let own = f.layer == layer;
        let mhsa_in = !own || site == LnSite::Ln1;
        if f.ffn_var_term < SINGULAR_TOL || (mhsa_in && f.mhsa_var_term < SINGULAR_TOL) {
            return None;
        }
        b /= f.ffn_var_term;
        if mhsa_in {
            b /= f.mhsa_var_term;
        }
        if !own || site == LnSite::Ln1 {
            b *= 1.0 + f.ffn_smax.value;
        }
        if !own {
            b *= 1.0 + f.mhsa_smax.value;
        }
    }
    Some(b)
}

/// Pre-LN bound at 1-based `layer`.
pub fn pre_ln_bound(head_norm: f64, factors: &[LayerFactors], layer: usize, site: LnSite) -> f64 {
    let mut b = head_norm;
    for f in &factors[layer - 1..] {
        b *= 1.0 + f.ffn_smax.value;
        if f.layer != layer || site == LnSite::Ln1 {
            b *= 1.0 + f.mhsa_smax.value;
        }
    }
    b
}

pub fn bound(variant: Variant, head_norm: f64, factors: &[LayerFactors], layer: usize, site: LnSite) -> Option<f64> {
    match variant {
        Variant::PostLn => post_ln_bound(head_norm, factors, layer, site),
        Variant::PreLn => Some(pre_ln_bound(head_norm, factors, layer, site)),
    }
}

/// Whether `seq` is nonincreasing within [`MONOTONE_SLACK`] relative
/// slack, and the 1-based index of the first element that rises.
pub fn monotonicity_check(seq: &[f64]) -> (bool, Option<usize>) {
    for k in 1..seq.len() {
        if seq[k] > seq[k - 1] * (1.0 + MONOTONE_SLACK) {
            return (false, Some(k + 1));
        }
    }
    (true, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub layer: usize,
    pub site: LnSite,
    pub measured: f64,
    pub bound: Option<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBoundReport {
    pub variant: Variant,
    pub head_norm: f64,
    pub factors: Vec<LayerFactors>,
    pub entries: Vec<BoundEntry>,
    pub all_converged: bool,
    pub variance_conditions_pass: bool,
    /// `[LN1, LN2]` monotonicity of the bound sequence over layers.
    pub monotone: [bool; 2],
    pub first_violation: [Option<usize>; 2],
}

impl SampleBoundReport {
    pub fn site_bounds(&self, site: LnSite) -> Vec<Option<f64>> {
        self.entries
            .iter()
            .filter(|e| e.site == site)
            .map(|e| e.bound)
            .collect()
    }
}

/// Measured LN-input gradient norms of one sample against their bounds.
pub fn evaluate_bounds(
    model: &Model,
    tokens: &[u32],
    label: usize,
    opts: &PowerIterationOptions,
    slack: f64,
) -> Result<SampleBoundReport> {
    let variant = model.config().variant;
    let trace = trace_sample(model, tokens, label)?;
    let factors = layer_factors(model, &trace, opts)?;
    let mut entries = Vec::new();
    let mut monotone = [true; 2];
    let mut first_violation = [None; 2];
    for (k, site) in LnSite::BOTH.into_iter().enumerate() {
        let mut seq = Vec::new();
        for layer in 1..=factors.len() {
            let b = bound(variant, trace.head_norm, &factors, layer, site);
            let measured = trace.measured[layer - 1][k];
            entries.push(BoundEntry {
                layer,
                site,
                measured,
                bound: b,
                valid: b.is_some_and(|b| measured <= b * (1.0 + slack)),
            });
            seq.push(b.unwrap_or(f64::INFINITY));
        }
        let (ok, at) = monotonicity_check(&seq);
        monotone[k] = ok;
        first_violation[k] = at;
    }
    entries.sort_by_key(|e| (e.layer, e.site));
    Ok(SampleBoundReport {
        variant,
        head_norm: trace.head_norm,
        all_converged: factors
            .iter()
            .all(|f| f.ffn_smax.converged && f.mhsa_smax.converged),
        variance_conditions_pass: factors.iter().all(LayerFactors::condition_passes),
        factors,
        entries,
        monotone,
        first_violation,
    })
}
