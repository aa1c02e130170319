#![allow(dead_code)]

use lnlab_core::model::layers::{ffn_rows, layer_norm_rows, mhsa_rows};
use lnlab_core::model::transformer::{
    ln_param_names, HEAD_BIAS, HEAD_WEIGHT, POSITION_EMBEDDING, TOKEN_EMBEDDING,
};
use lnlab_core::model::{AblationSpec, Activation, LnSite, Model, ModelConfig, SiteId, Variant};
use lnlab_core::numerics::rng;
use lnlab_core::numerics::{Graph, Reduction, Tensor, Var};
use lnlab_core::Result;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn normal_tensor(r: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            z * std
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn test_rng(tag: &str) -> rng::Rng {
    rng::stream(7, tag)
}

pub fn tiny_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        num_layers: 2,
        d_model: 8,
        num_heads: 2,
        ffn_hidden: 12,
        vocab_size: 10,
        seq_len: 3,
        num_classes: 4,
        activation: Activation::Gelu,
        ln_epsilon: 1e-5,
        init_std: 0.3,
        embed_std: 1.0,
        ablation: AblationSpec::none(),
    }
}

/// Replaces every LN affine map with random values so gradients through
/// `w` and `b` are nontrivial.
pub fn randomize_ln(model: &mut Model, seed: u64) {
    let mut r = rng::stream(seed, "test/ln");
    let d = model.config().d_model;
    for layer in 1..=model.config().num_layers {
        for site in LnSite::BOTH {
            let s = SiteId { layer, site };
            if model.is_ablated(s) {
                continue;
            }
            let (w, b) = ln_param_names(s);
            let mut wt = normal_tensor(&mut r, &[d], 0.3);
            wt.data_mut().iter_mut().for_each(|x| *x += 1.0);
            model.set_param(&w, wt).unwrap();
            model.set_param(&b, normal_tensor(&mut r, &[d], 0.3)).unwrap();
        }
    }
}

pub fn random_tokens(r: &mut impl Rng, cfg: &ModelConfig) -> Vec<u32> {
    (0..cfg.seq_len)
        .map(|_| r.random_range(0..cfg.vocab_size as u32))
        .collect()
}

/// Perturbation added to one LN input during [`reference_loss`].
#[derive(Clone, Copy)]
pub struct Perturb<'a> {
    pub site: SiteId,
    pub delta: &'a [f64],
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn ln(model: &Model, layer: usize, site: LnSite, x: &[f64]) -> Vec<f64> {
    let p = model.ln_params(SiteId { layer, site });
    let d = model.config().d_model;
    let affine = p
        .affine_enabled
        .then(|| (p.weight.data(), p.bias.data()));
    layer_norm_rows(x, d, affine, p.epsilon)
}

/// Final hidden state of one sequence, composed from the per-layer
/// reference functions, with an optional perturbation at one LN input.
pub fn reference_hidden(model: &Model, tokens: &[u32], perturb: Option<Perturb>) -> Vec<f64> {
    let c = model.config();
    let d = c.d_model;
    let tok = model.param(TOKEN_EMBEDDING).unwrap();
    let pos = model.param(POSITION_EMBEDDING).unwrap();
    let mut x: Vec<f64> = Vec::with_capacity(tokens.len() * d);
    for (t, &id) in tokens.iter().enumerate() {
        x.extend(add(tok.row(id as usize), pos.row(t)));
    }
    let bump = |layer: usize, site: LnSite, v: Vec<f64>| match perturb {
        Some(p) if p.site == (SiteId { layer, site }) => add(&v, p.delta),
        _ => v,
    };
    for l in 1..=c.num_layers {
        let aw = model.attention_weights(l);
        let fw = model.ffn_weights(l);
        x = match c.variant {
            Variant::PreLn => {
                let x0 = bump(l, LnSite::Ln1, x);
                let mid = add(&x0, &mhsa_rows(&ln(model, l, LnSite::Ln1, &x0), d, &aw));
                let mid = bump(l, LnSite::Ln2, mid);
                add(&mid, &ffn_rows(&ln(model, l, LnSite::Ln2, &mid), d, &fw))
            }
            Variant::PostLn => {
                let z = bump(l, LnSite::Ln1, add(&x, &mhsa_rows(&x, d, &aw)));
                let mid = ln(model, l, LnSite::Ln1, &z);
                let z2 = bump(l, LnSite::Ln2, add(&mid, &ffn_rows(&mid, d, &fw)));
                ln(model, l, LnSite::Ln2, &z2)
            }
        };
    }
    x
}

pub fn reference_logits(model: &Model, tokens: &[u32], perturb: Option<Perturb>) -> Vec<f64> {
    let c = model.config();
    let h = reference_hidden(model, tokens, perturb);
    let w = model.param(HEAD_WEIGHT).unwrap();
    let b = model.param(HEAD_BIAS).unwrap();
    (0..c.num_classes)
        .map(|k| b.data()[k] + (0..c.d_model).map(|j| h[j] * w.data()[j * c.num_classes + k]).sum::<f64>())
        .collect()
}

/// Cross-entropy by log-sum-exp.
pub fn reference_ce(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub fn reference_loss(model: &Model, tokens: &[u32], label: usize, perturb: Option<Perturb>) -> f64 {
    reference_ce(&reference_logits(model, tokens, perturb), label)
}

/// Finite-difference gradient of the loss with respect to one LN input.
pub fn fd_ln_input_grad(model: &Model, tokens: &[u32], label: usize, site: SiteId) -> Vec<f64> {
    let n = tokens.len() * model.config().d_model;
    let mut delta = vec![0.0; n];
    (0..n)
        .map(|i| {
            let mut at = |h: f64| {
                delta[i] = h;
                let v = reference_loss(model, tokens, label, Some(Perturb { site, delta: &delta }));
                delta[i] = 0.0;
                v
            };
            (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Dense `rows × cols` matrix spectral norm by SVD.
pub fn svd_smax(a: &[f64], rows: usize, cols: usize) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(rows, cols, a);
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub const FD_POINTS: usize = 100;
pub const FD_TOL: f64 = 1e-4;
pub const FD_FLOOR: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// One differentiable primitive with its input shapes.
pub struct PrimitiveCase {
    pub name: &'static str,
    shapes: Vec<Vec<usize>>,
    prepare: fn(&mut [Tensor]),
    build: Build,
}

fn case(
    name: &'static str,
    shapes: &[&[usize]],
    prepare: fn(&mut [Tensor]),
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> PrimitiveCase {
    PrimitiveCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        prepare,
        build: Box::new(build),
    }
}

fn keep(_: &mut [Tensor]) {}

/// Keeps ReLU inputs at least 1e-2 from its kink.
fn away_from_zero(ts: &mut [Tensor]) {
    for t in ts.iter_mut() {
        for x in t.data_mut() {
            if x.abs() < 1e-2 {
                *x += 0.05_f64.copysign(*x);
            }
        }
    }
}

pub fn primitive_cases() -> Vec<PrimitiveCase> {
    let c = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    vec![
        case("matmul", &[&[2, 3, 4], &[4, 5]], keep, |g, v| g.matmul(v[0], v[1])),
        case("add", &[&[3, 4], &[3, 4]], keep, |g, v| g.add(v[0], v[1])),
        case("mul", &[&[3, 4], &[3, 4]], keep, |g, v| g.mul(v[0], v[1])),
        case("scale", &[&[5]], keep, |g, v| g.scale(v[0], -2.5)),
        case("add_bias", &[&[2, 3, 4], &[4]], keep, |g, v| g.add_bias(v[0], v[1])),
        case("relu", &[&[3, 4]], away_from_zero, |g, v| g.relu(v[0])),
        case("gelu", &[&[3, 4]], keep, |g, v| g.gelu(v[0])),
        case("sum_squares", &[&[3, 4]], keep, |g, v| g.sum_squares(v[0])),
        case("sum", &[&[3, 4]], keep, |g, v| g.sum(v[0])),
        case("dot_const", &[&[2, 2]], keep, move |g, v| g.dot_const(v[0], &c)),
        case("layer_norm", &[&[3, 6]], keep, |g, v| g.layer_norm(v[0], None, 1e-5)),
        case("layer_norm_affine", &[&[3, 6], &[6], &[6]], keep, |g, v| {
            g.layer_norm(v[0], Some((v[1], v[2])), 1e-5)
        }),
        case("attention", &[&[6, 4], &[6, 4], &[6, 4]], keep, |g, v| g.attention(v[0], v[1], v[2], 3, 2)),
        case("gather_rows", &[&[4, 3]], keep, |g, v| g.gather_rows(v[0], &[2, 0, 2, 3])),
        case("ce_mean", &[&[3, 5]], keep, |g, v| g.cross_entropy(v[0], &[1, 4, 0], Reduction::Mean)),
        case("ce_sum", &[&[3, 5]], keep, |g, v| g.cross_entropy(v[0], &[2, 2, 3], Reduction::Sum)),
    ]
}

/// Max relative error of every input component of `case` against central
/// differences at `points` random points. Non-scalar outputs are contracted
/// with a random vector first.
pub fn primitive_fd_error(case: &PrimitiveCase, points: usize) -> f64 {
    let mut r = test_rng(case.name);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let mut inputs: Vec<Tensor> = case.shapes.iter().map(|s| normal_tensor(&mut r, s, 1.0)).collect();
        (case.prepare)(&mut inputs);
        let probe = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            let out = (case.build)(&mut g, &vars).unwrap();
            g.value(out).shape().to_vec()
        };
        let proj = normal_tensor(&mut r, &probe, 1.0);
        let eval = |inputs: &[Tensor]| -> (Graph, Vec<Var>, Var) {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
            let out = (case.build)(&mut g, &vars).unwrap();
            let loss = if g.value(out).len() == 1 && probe.is_empty() {
                out
            } else {
                g.dot_const(out, &proj).unwrap()
            };
            (g, vars, loss)
        };
        let (g, vars, loss) = eval(&inputs);
        let grads = g.backward(loss).unwrap();
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.wrt(&g, *v).unwrap();
            for i in 0..inputs[k].len() {
                let numeric = central_difference(
                    |x| {
                        let mut p = inputs.clone();
                        p[k].data_mut()[i] = x;
                        let (g, _, l) = eval(&p);
                        g.value(l).data()[0]
                    },
                    inputs[k].data()[i],
                    FD_STEP,
                );
                worst = worst.max(rel_err(analytic.data()[i], numeric, FD_FLOOR));
            }
        }
    }
    worst
}

fn graph_loss(model: &Model, batch: &[&[u32]], labels: &[usize]) -> f64 {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let out = model.forward(&mut g, &bound, batch).unwrap();
    let loss = g.cross_entropy(out.logits, labels, Reduction::Mean).unwrap();
    g.value(loss).data()[0]
}

/// Max relative error of the full model loss gradient over six random
/// parameter components at each of `points` random models, alternating
/// variant, activation and ablation.
pub fn model_fd_error(points: usize) -> f64 {
    let mut r = test_rng("model-fd");
    let mut worst: f64 = 0.0;
    for point in 0..points {
        let variant = if point % 2 == 0 { Variant::PreLn } else { Variant::PostLn };
        let mut cfg = tiny_config(variant);
        if point % 3 == 0 {
            cfg.activation = Activation::Relu;
        }
        if point % 5 == 0 {
            cfg.ablation = AblationSpec::explicit([SiteId { layer: 1, site: LnSite::Ln2 }]);
        }
        let mut model = Model::new(cfg.clone(), point as u64).unwrap();
        randomize_ln(&mut model, point as u64);
        let seqs: Vec<Vec<u32>> = (0..2).map(|_| random_tokens(&mut r, &cfg)).collect();
        let batch: Vec<&[u32]> = seqs.iter().map(|s| &s[..]).collect();
        let labels: Vec<usize> = (0..2).map(|_| r.random_range(0..cfg.num_classes)).collect();

        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let out = model.forward(&mut g, &bound, &batch).unwrap();
        let loss = g.cross_entropy(out.logits, &labels, Reduction::Mean).unwrap();
        let grads = g.backward(loss).unwrap();

        let names: Vec<String> = model.trainable_names().iter().map(|s| s.to_string()).collect();
        for _ in 0..6 {
            let name = &names[r.random_range(0..names.len())];
            let len = model.param(name).unwrap().len();
            let i = r.random_range(0..len);
            let analytic = grads.wrt(&g, bound.get(name).unwrap()).unwrap().data()[i];
            let numeric = central_difference(
                |x| {
                    let mut m = model.clone();
                    let mut t = m.param(name).unwrap().clone();
                    t.data_mut()[i] = x;
                    m.set_param(name, t).unwrap();
                    graph_loss(&m, &batch, &labels)
                },
                model.param(name).unwrap().data()[i],
                FD_STEP,
            );
            worst = worst.max(rel_err(analytic, numeric, FD_FLOOR));
        }
    }
    worst
}
