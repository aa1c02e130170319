use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::config::{Activation, AblationSpec, LnSite, ModelConfig, SiteId, Variant};
use super::layers::{AttentionWeights, FfnWeights, LayerNormParams};
use crate::numerics::{rng, Graph, Tensor, Var};
use crate::{Error, Result};

pub const TOKEN_EMBEDDING: &str = "embed.tokens";
pub const POSITION_EMBEDDING: &str = "embed.positions";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

/// Name of a per-layer parameter; `layer` is 1-based.
pub fn layer_param(layer: usize, part: &str) -> String {
    format!("layers.{layer}.{part}")
}

pub fn ln_param_names(site: SiteId) -> (String, String) {
    let s = site.site.name();
    (
        layer_param(site.layer, &format!("{s}.weight")),
        layer_param(site.layer, &format!("{s}.bias")),
    )
}

const ATTN_PARTS: [&str; 8] = [
    "attn.wq", "attn.wk", "attn.wv", "attn.wo", "attn.bq", "attn.bk", "attn.bv", "attn.bo",
];
const FFN_PARTS: [&str; 4] = ["ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"];

/// Classifier: token + positional embedding, `N` blocks, first-position
/// pooling, affine head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
    ablated: BTreeSet<SiteId>,
}

fn shapes(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (c.d_model, c.ffn_hidden);
    let mut out = vec![
        (TOKEN_EMBEDDING.to_string(), vec![c.vocab_size, d]),
        (POSITION_EMBEDDING.to_string(), vec![c.seq_len, d]),
        (HEAD_WEIGHT.to_string(), vec![d, c.num_classes]),
        (HEAD_BIAS.to_string(), vec![c.num_classes]),
    ];
    for l in 1..=c.num_layers {
        for m in ["attn.wq", "attn.wk", "attn.wv", "attn.wo"] {
            out.push((layer_param(l, m), vec![d, d]));
        }
        for b in ["attn.bq", "attn.bk", "attn.bv", "attn.bo", "ffn.b2"] {
            out.push((layer_param(l, b), vec![d]));
        }
        out.push((layer_param(l, "ffn.w1"), vec![d, f]));
        out.push((layer_param(l, "ffn.b1"), vec![f]));
        out.push((layer_param(l, "ffn.w2"), vec![f, d]));
        for site in LnSite::BOTH {
            let (w, b) = ln_param_names(SiteId { layer: l, site });
            out.push((w, vec![d]));
            out.push((b, vec![d]));
        }
    }
    out
}

fn is_ln_param(name: &str) -> bool {
    name.contains(".ln1.") || name.contains(".ln2.")
}

impl Model {
    /// Seeded initialization followed by the configured ablation. Every
    /// tensor draws from its own named stream, so initial values do not
    /// depend on the ablation or on the set of other parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = BTreeMap::new();
        for (name, shape) in shapes(&config) {
            let t = if name.ends_with(".weight") && is_ln_param(&name) {
                Tensor::ones(&shape)
            } else if name == TOKEN_EMBEDDING || name == POSITION_EMBEDDING {
                random(&shape, config.embed_std, seed, &name)
            } else if name == HEAD_WEIGHT || name.contains(".w") {
                random(&shape, config.init_std, seed, &name)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t);
        }
        let spec = config.ablation.clone();
        let mut model = Self {
            config,
            params,
            ablated: BTreeSet::new(),
        };
        model.apply_ablation(&spec)?;
        Ok(model)
    }

    /// Rebuilds a model from saved tensors, checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        }
        let ablated = config.ablation.resolve(config.num_layers)?;
        Ok(Self {
            config,
            params,
            ablated,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Overwrites a parameter, keeping its shape. Intended for building
    /// fixtures; training goes through [`Model::trainable_mut`].
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::InvalidConfig(format!("no parameter named {name}")))?;
        if !slot.same_shape(&value) {
            return Err(Error::shape(
                "set_param",
                format!("{name}: {:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn ablated_sites(&self) -> &BTreeSet<SiteId> {
        &self.ablated
    }

    pub fn is_ablated(&self, site: SiteId) -> bool {
        self.ablated.contains(&site)
    }

    fn is_frozen(&self, name: &str) -> bool {
        self.ablated.iter().any(|&s| {
            let (w, b) = ln_param_names(s);
            name == w || name == b
        })
    }

    /// Disables the affine map at every site `spec` selects: `w = 1`,
    /// `b = 0`, removed from the trainable set. Already-ablated sites stay
    /// ablated.
    pub fn apply_ablation(&mut self, spec: &AblationSpec) -> Result<()> {
        let sites = spec.resolve(self.config.num_layers)?;
        let d = self.config.d_model;
        for &s in &sites {
            let (w, b) = ln_param_names(s);
            self.params.insert(w, Tensor::ones(&[d]));
            self.params.insert(b, Tensor::zeros(&[d]));
        }
        let prior = self.ablated.len();
        self.ablated.extend(sites);
        self.config.ablation = if prior == 0 {
            spec.clone()
        } else {
            AblationSpec::explicit(self.ablated.iter().copied())
        };
        Ok(())
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.params
            .keys()
            .filter(|n| !self.is_frozen(n))
            .map(String::as_str)
            .collect()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.trainable_names()
            .iter()
            .map(|n| self.params[*n].len())
            .sum()
    }

    /// Mutable access to trainable tensors only, in name order.
    pub fn trainable_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        let frozen: BTreeSet<String> = self
            .ablated
            .iter()
            .flat_map(|&s| {
                let (w, b) = ln_param_names(s);
                [w, b]
            })
            .collect();
        self.params
            .iter_mut()
            .filter(move |(n, _)| !frozen.contains(n.as_str()))
            .map(|(n, t)| (n.as_str(), t))
    }

    pub fn ln_params(&self, site: SiteId) -> LayerNormParams {
        let (w, b) = ln_param_names(site);
        LayerNormParams {
            weight: self.params[&w].clone(),
            bias: self.params[&b].clone(),
            affine_enabled: !self.is_ablated(site),
            epsilon: self.config.ln_epsilon,
        }
    }

    pub fn attention_weights(&self, layer: usize) -> AttentionWeights {
        let p = |part| self.params[&layer_param(layer, part)].clone();
        AttentionWeights {
            wq: p("attn.wq"),
            wk: p("attn.wk"),
            wv: p("attn.wv"),
            wo: p("attn.wo"),
            bq: p("attn.bq"),
            bk: p("attn.bk"),
            bv: p("attn.bv"),
            bo: p("attn.bo"),
            num_heads: self.config.num_heads,
        }
    }

    pub fn ffn_weights(&self, layer: usize) -> FfnWeights {
        let p = |part| self.params[&layer_param(layer, part)].clone();
        FfnWeights {
            w1: p("ffn.w1"),
            b1: p("ffn.b1"),
            w2: p("ffn.w2"),
            b2: p("ffn.b2"),
            activation: self.config.activation,
        }
    }

    /// SHA-256 over names, shapes and little-endian values of the selected
    /// tensors.
    pub fn hash_params(&self, include: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.params.iter().filter(|(n, _)| include(n)) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &e in t.shape() {
                h.update((e as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn param_hash(&self) -> String {
        self.hash_params(|_| true)
    }

    /// Hash of every tensor except LayerNorm affine parameters.
    pub fn non_ln_hash(&self) -> String {
        self.hash_params(|n| !is_ln_param(n))
    }

    /// Records parameters on `g` as differentiable leaves (or as constants
    /// when `requires_grad` is false). Ablated LN sites are not recorded.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .filter(|(n, _)| !self.is_frozen(n))
            .map(|(n, t)| (n.clone(), g.leaf(t.clone(), requires_grad)))
            .collect();
        BoundParams { vars }
    }

    fn block_vars(&self, bound: &BoundParams, layer: usize) -> BlockVars {
        let v = |part: &str| bound.vars[&layer_param(layer, part)];
        let ln = |site| {
            let s = SiteId { layer, site };
            if self.is_ablated(s) {
                None
            } else {
                let (w, b) = ln_param_names(s);
                Some((bound.vars[&w], bound.vars[&b]))
            }
        };
        let a: Vec<Var> = ATTN_PARTS.iter().map(|p| v(p)).collect();
        let f: Vec<Var> = FFN_PARTS.iter().map(|p| v(p)).collect();
        BlockVars {
            ln1: ln(LnSite::Ln1),
            ln2: ln(LnSite::Ln2),
            wq: a[0],
            wk: a[1],
            wv: a[2],
            wo: a[3],
            bq: a[4],
            bk: a[5],
            bv: a[6],
            bo: a[7],
            w1: f[0],
            b1: f[1],
            w2: f[2],
            b2: f[3],
        }
    }

    /// Full forward pass over a batch of equal-length sequences.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        batch: &[&[u32]],
    ) -> Result<ForwardPass> {
        let c = &self.config;
        let t = c.seq_len;
        if batch.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let mut ids = Vec::with_capacity(batch.len() * t);
        for seq in batch {
            if seq.len() != t {
                return Err(Error::shape(
                    "model_forward",
                    format!("sequence length {} vs seq_len {t}", seq.len()),
                ));
            }
            for &tok in *seq {
                if tok as usize >= c.vocab_size {
                    return Err(Error::InvalidToken {
                        token: tok,
                        vocab_size: c.vocab_size,
                    });
                }
                ids.push(tok as usize);
            }
        }
        let positions: Vec<usize> = (0..batch.len()).flat_map(|_| 0..t).collect();
        let tok = g.gather_rows(bound.vars[TOKEN_EMBEDDING], &ids)?;
        let pos = g.gather_rows(bound.vars[POSITION_EMBEDDING], &positions)?;
        let embedding = g.add(tok, pos)?;
        let spec = BlockSpec {
            seq_len: t,
            num_heads: c.num_heads,
            activation: c.activation,
            epsilon: c.ln_epsilon,
        };
        let mut x = embedding;
        let mut layers = Vec::with_capacity(c.num_layers);
        for l in 1..=c.num_layers {
            let vars = self.block_vars(bound, l);
            let taps = match c.variant {
                Variant::PreLn => pre_ln_block(g, &vars, &spec, x)?,
                Variant::PostLn => post_ln_block(g, &vars, &spec, x)?,
            };
            x = taps.output;
            layers.push(taps);
        }
        let first: Vec<usize> = (0..batch.len()).map(|b| b * t).collect();
        let pooled = g.gather_rows(x, &first)?;
        let logits = g.matmul(pooled, bound.vars[HEAD_WEIGHT])?;
        let logits = g.add_bias(logits, bound.vars[HEAD_BIAS])?;
        Ok(ForwardPass {
            embedding,
            layers,
            final_hidden: x,
            pooled,
            logits,
            batch_size: batch.len(),
        })
    }

    /// Logits `[B × C]` from a constant (gradient-free) pass.
    pub fn logits(&self, batch: &[&[u32]]) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let out = self.forward(&mut g, &bound, batch)?;
        Ok(g.value(out.logits).clone())
    }
}

fn random(shape: &[usize], std: f64, seed: u64, name: &str) -> Tensor {
    let mut r = rng::stream(seed, &format!("init/{name}"));
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            z * std
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape from config is valid")
}

/// Parameter handles on one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

/// Graph handles for one block's parameters. `ln1` / `ln2` are `None` at
/// ablated sites.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1: Option<(Var, Var)>,
    pub ln2: Option<(Var, Var)>,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bq: Var,
    pub bk: Var,
    pub bv: Var,
    pub bo: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub seq_len: usize,
    pub num_heads: usize,
    pub activation: Activation,
    pub epsilon: f64,
}

/// Recorded tensors of one block.
///
/// `ln1_input` / `ln2_input` are `x`, `x'` for Pre-LN and `z`, `z'` for
/// Post-LN. `mid` is `x'` in both variants.
#[derive(Debug, Clone, Copy)]
pub struct LayerTaps {
    pub input: Var,
    pub ln1_input: Var,
    pub ln2_input: Var,
    pub mid: Var,
    pub mhsa_out: Var,
    pub ffn_out: Var,
    pub output: Var,
}

impl LayerTaps {
    pub fn ln_input(&self, site: LnSite) -> Var {
        match site {
            LnSite::Ln1 => self.ln1_input,
            LnSite::Ln2 => self.ln2_input,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub embedding: Var,
    pub layers: Vec<LayerTaps>,
    /// `y_N`, all positions.
    pub final_hidden: Var,
    pub pooled: Var,
    pub logits: Var,
    pub batch_size: usize,
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

pub fn mhsa(g: &mut Graph, v: &BlockVars, spec: &BlockSpec, x: Var) -> Result<Var> {
    let q = linear(g, x, v.wq, v.bq)?;
    let k = linear(g, x, v.wk, v.bk)?;
    let val = linear(g, x, v.wv, v.bv)?;
    let o = g.attention(q, k, val, spec.seq_len, spec.num_heads)?;
    linear(g, o, v.wo, v.bo)
}

pub fn ffn(g: &mut Graph, v: &BlockVars, spec: &BlockSpec, x: Var) -> Result<Var> {
    let h = linear(g, x, v.w1, v.b1)?;
    let h = match spec.activation {
        Activation::Gelu => g.gelu(h)?,
        Activation::Relu => g.relu(h)?,
    };
    linear(g, h, v.w2, v.b2)
}

/// `x' = x + MHSA(LN₁(x))`, `y = x' + FFN(LN₂(x'))`.
pub fn pre_ln_block(g: &mut Graph, v: &BlockVars, spec: &BlockSpec, x: Var) -> Result<LayerTaps> {
    let n1 = g.layer_norm(x, v.ln1, spec.epsilon)?;
    let a = mhsa(g, v, spec, n1)?;
    let mid = g.add(x, a)?;
    let n2 = g.layer_norm(mid, v.ln2, spec.epsilon)?;
    let f = ffn(g, v, spec, n2)?;
    let y = g.add(mid, f)?;
    Ok(LayerTaps {
        input: x,
        ln1_input: x,
        ln2_input: mid,
        mid,
        mhsa_out: a,
        ffn_out: f,
        output: y,
    })
}

/// `z = x + MHSA(x)`, `x' = LN₁(z)`, `z' = x' + FFN(x')`, `y = LN₂(z')`.
pub fn post_ln_block(
    g: &mut Graph,
    v: &BlockVars,
    spec: &BlockSpec,
    x: Var,
) -> Result<LayerTaps> {
    let a = mhsa(g, v, spec, x)?;
    let z = g.add(x, a)?;
    let mid = g.layer_norm(z, v.ln1, spec.epsilon)?;
    let f = ffn(g, v, spec, mid)?;
    let z2 = g.add(mid, f)?;
    let y = g.layer_norm(z2, v.ln2, spec.epsilon)?;
    Ok(LayerTaps {
        input: x,
        ln1_input: z,
        ln2_input: z2,
        mid,
        mhsa_out: a,
        ffn_out: f,
        output: y,
    })
}
