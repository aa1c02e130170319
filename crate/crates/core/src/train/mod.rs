//! Adam and the train-until-memorized loop.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{LabeledDataset, NoisyLabelRecord, Split};
use crate::metrics::{classify_noisy_outcomes, format_score, MetricsSnapshot, Ratio};
use crate::model::Model;
use crate::numerics::{rng, Graph, Reduction, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

fn d_lr() -> f64 {
    3e-4
}
fn d_batch() -> usize {
    16
}
fn d_epochs() -> usize {
    200
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_true() -> bool {
    true
}
fn d_eval_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Zero is accepted and yields only the initial evaluation.
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default = "d_true")]
    pub stop_at_full_train_accuracy: bool,
    #[serde(default)]
    pub seed: u64,
    /// Batch size of gradient-free evaluation passes.
    #[serde(default = "d_eval_batch")]
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: d_lr(),
            batch_size: d_batch(),
            max_epochs: d_epochs(),
            optimizer: Optimizer::Adam,
            beta1: d_beta1(),
            beta2: d_beta2(),
            adam_eps: d_eps(),
            stop_at_full_train_accuracy: true,
            seed: 0,
            eval_batch_size: d_eval_batch(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrainConfig(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0".into());
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

/// One bias-corrected Adam update of every trainable tensor. Parameters
/// without an entry in `grads` see a zero gradient.
pub fn adam_step(
    model: &mut Model,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in model.trainable_mut() {
        let n = p.len();
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
        let g = grads.get(name).map(Tensor::data);
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *x -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub accuracy: Ratio,
    /// Mean cross-entropy against the dataset labels.
    pub mean_loss: f64,
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row[target] - lse
}

/// Gradient-free evaluation of `ids` against their dataset labels.
pub fn evaluate(
    model: &Model,
    data: &LabeledDataset,
    ids: &[usize],
    batch_size: usize,
) -> Result<Evaluation> {
    if ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut predictions = Vec::with_capacity(ids.len());
    let mut correct = 0;
    let mut loss = 0.0;
    for chunk in ids.chunks(batch_size.max(1)) {
        let seqs: Vec<&[u32]> = chunk.iter().map(|&i| &data.samples[i].tokens[..]).collect();
        let logits = model.logits(&seqs)?;
        for (r, &i) in chunk.iter().enumerate() {
            let row = logits.row(r);
            let p = argmax(row);
            let y = data.samples[i].label;
            correct += usize::from(p == y);
            loss -= log_softmax_at(row, y);
            predictions.push(p);
        }
    }
    Ok(Evaluation {
        predictions,
        accuracy: Ratio::new(correct, ids.len()).expect("nonempty"),
        mean_loss: loss / ids.len() as f64,
    })
}

pub fn evaluate_split(
    model: &Model,
    data: &LabeledDataset,
    split: Split,
    batch_size: usize,
) -> Result<Evaluation> {
    evaluate(model, data, &data.indices(split), batch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub metrics: MetricsSnapshot,
    /// SHA-256 of all parameters at the end of the epoch.
    pub checkpoint: String,
}

impl EpochRecord {
    pub fn train_accuracy(&self) -> Ratio {
        self.metrics.train_accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Epoch 0 is the evaluation before any update.
    pub epochs: Vec<EpochRecord>,
    pub memorization_complete: bool,
    /// Hash of every epoch's sample order.
    pub batch_order_hash: String,
    /// Hash of the initial non-LayerNorm parameters.
    pub init_hash: String,
}

impl TrainRecord {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("record holds the initial evaluation")
    }
}

pub const EPOCH_CSV_HEADER: [&str; 8] = [
    "epoch",
    "train_acc",
    "train_loss",
    "test_acc",
    "mem_score",
    "rec_score",
    "rand_score",
    "overfit_gap",
];

/// One row per recorded epoch. Percentages carry two decimals, scores of an
/// empty manifest are `N/A`, floats use their shortest round-trip form.
pub fn write_epoch_csv(record: &TrainRecord, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EPOCH_CSV_HEADER)?;
    for e in &record.epochs {
        let m = &e.metrics;
        w.write_record([
            e.epoch.to_string(),
            m.train_accuracy.to_string(),
            e.train_loss.to_string(),
            m.learning_accuracy.to_string(),
            format_score(m.memorization),
            format_score(m.recovery),
            format_score(m.random_prediction),
            m.overfit_gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn snapshot(
    model: &Model,
    data: &LabeledDataset,
    train_ids: &[usize],
    test_ids: &[usize],
    manifest: &[NoisyLabelRecord],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochRecord> {
    let train = evaluate(model, data, train_ids, cfg.eval_batch_size)?;
    let test = evaluate(model, data, test_ids, cfg.eval_batch_size)?;
    let preds: BTreeMap<usize, usize> = train_ids
        .iter()
        .copied()
        .zip(train.predictions.iter().copied())
        .collect();
    let outcomes = classify_noisy_outcomes(&preds, manifest)?;
    Ok(EpochRecord {
        epoch,
        train_loss: train.mean_loss,
        metrics: MetricsSnapshot::new(test.accuracy, train.accuracy, &outcomes),
        checkpoint: model.param_hash(),
    })
}

/// Sample order of one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(train_ids: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = train_ids.to_vec();
    order.shuffle(&mut rng::indexed_stream(seed, "shuffle", epoch as u64));
    order
}

/// Mean cross-entropy gradients of one batch, keyed by trainable name.
pub fn batch_gradients(
    model: &Model,
    data: &LabeledDataset,
    ids: &[usize],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let seqs: Vec<&[u32]> = ids.iter().map(|&i| &data.samples[i].tokens[..]).collect();
    let labels: Vec<usize> = ids.iter().map(|&i| data.samples[i].label).collect();
    let out = model.forward(&mut g, &bound, &seqs)?;
    let loss = g.cross_entropy(out.logits, &labels, Reduction::Mean)?;
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    let mut map = BTreeMap::new();
    for (name, &v) in &bound.vars {
        map.insert(name.clone(), grads.wrt(&g, v)?);
    }
    Ok((value, map))
}

/// Trains on the train split (with its possibly noisy labels) until every
/// train sample is predicted as its label, or `max_epochs` is reached.
/// Metrics are taken on the end-of-epoch parameters.
pub fn train_until_memorized(
    model: &mut Model,
    data: &LabeledDataset,
    manifest: &[NoisyLabelRecord],
    cfg: &TrainConfig,
) -> Result<TrainRecord> {
    cfg.validate()?;
    let train_ids = data.indices(Split::Train);
    let test_ids = data.indices(Split::Test);
    if train_ids.is_empty() || test_ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    let init_hash = model.non_ln_hash();
    let mut order_hash = Sha256::new();
    let mut state = AdamState::default();
    let mut epochs = vec![snapshot(model, data, &train_ids, &test_ids, manifest, cfg, 0)?];
    let full = |r: &EpochRecord| r.train_accuracy().count == r.train_accuracy().total;
    let mut complete = full(&epochs[0]);
    if !(complete && cfg.stop_at_full_train_accuracy) {
        for epoch in 1..=cfg.max_epochs {
            let order = epoch_order(&train_ids, cfg.seed, epoch);
            for id in &order {
                order_hash.update((*id as u64).to_le_bytes());
            }
            for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
                let (loss, grads) = batch_gradients(model, data, batch)?;
                if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                adam_step(model, &grads, &mut state, cfg);
            }
            let rec = snapshot(model, data, &train_ids, &test_ids, manifest, cfg, epoch)?;
            complete = full(&rec);
            log::debug!(
                "epoch {epoch}: train {} test {} loss {:.4}",
                rec.metrics.train_accuracy,
                rec.metrics.learning_accuracy,
                rec.train_loss
            );
            epochs.push(rec);
            if complete && cfg.stop_at_full_train_accuracy {
                break;
            }
        }
    }
    Ok(TrainRecord {
        epochs,
        memorization_complete: complete,
        batch_order_hash: hex::encode(order_hash.finalize()),
        init_hash,
    })
}
