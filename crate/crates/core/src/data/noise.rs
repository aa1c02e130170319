use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split};
use crate::numerics::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Fraction of the whole train split.
    GlobalFraction,
    /// Fraction of the train samples of one class.
    #[default]
    PerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub mode: NoiseMode,
    pub fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoisyLabelRecord {
    pub sample_id: usize,
    pub true_label: usize,
    pub noisy_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub dataset: LabeledDataset,
    /// Sorted by `sample_id`.
    pub manifest: Vec<NoisyLabelRecord>,
    /// Set when a positive fraction selected no samples.
    pub empty_warning: bool,
}

/// `⌊f·n⌋`, at least 1 when both `f` and `n` are positive.
pub fn noisy_count(fraction: f64, n: usize) -> usize {
    if fraction <= 0.0 || n == 0 {
        return 0;
    }
    ((fraction * n as f64 + 1e-9).floor() as usize).clamp(1, n)
}

/// Relabels a seeded selection of train samples with a class drawn
/// uniformly from the other `C − 1`. Val and test samples are untouched.
pub fn inject_noisy_labels(
    dataset: &LabeledDataset,
    seed: u64,
    spec: &NoiseSpec,
) -> Result<Injection> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(Error::InvalidDataset(format!(
            "noise fraction must lie in [0, 1], got {}",
            spec.fraction
        )));
    }
    let c = dataset.num_classes;
    let mut pool = dataset.indices(Split::Train);
    if spec.mode == NoiseMode::PerClass {
        let target = spec.target_class.ok_or(Error::MissingTargetClass)?;
        if target >= c {
            return Err(Error::ClassOutOfRange {
                index: target,
                num_classes: c,
            });
        }
        pool.retain(|&i| dataset.samples[i].label == target);
    }
    let k = noisy_count(spec.fraction, pool.len());
    let mut r = rng::stream(seed, "noise");
    pool.shuffle(&mut r);
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();

    let mut out = dataset.clone();
    let mut manifest = Vec::with_capacity(k);
    for id in chosen {
        let y = out.samples[id].label;
        let draw = r.random_range(0..c - 1);
        let noisy = if draw >= y { draw + 1 } else { draw };
        out.samples[id].label = noisy;
        manifest.push(NoisyLabelRecord {
            sample_id: id,
            true_label: y,
            noisy_label: noisy,
        });
    }
    Ok(Injection {
        dataset: out,
        manifest,
        empty_warning: k == 0 && spec.fraction > 0.0,
    })
}
