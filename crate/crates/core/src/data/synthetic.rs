//! Motif-classification corpus.
//!
//! Position 0 always holds [`CLS_TOKEN`]. Each class owns a contiguous
//! motif of `motif_len` distinct tokens, planted once at a random offset in
//! positions `1..T`. Remaining positions are uniform over every non-CLS
//! token, motif tokens included; sequences that would contain another
//! class's complete motif are redrawn, so the planted motif identifies the
//! class exactly.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Provenance, Sample, Split};
use crate::numerics::rng;
use crate::{Error, Result};

pub const CLS_TOKEN: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub samples_per_class: usize,
    #[serde(default = "default_motif_len")]
    pub motif_len: usize,
}

fn default_motif_len() -> usize {
    3
}

/// Motif tokens of class `c`.
pub fn motif(c: usize, motif_len: usize) -> Vec<u32> {
    (0..motif_len).map(|k| (1 + c * motif_len + k) as u32).collect()
}

fn contains(seq: &[u32], pat: &[u32]) -> bool {
    seq.windows(pat.len()).any(|w| w == pat)
}

/// Rule-based classifier: the unique class whose motif occurs in `tokens`.
pub fn motif_oracle(tokens: &[u32], num_classes: usize, motif_len: usize) -> Option<usize> {
    let mut hits = (0..num_classes).filter(|&c| contains(tokens, &motif(c, motif_len)));
    match (hits.next(), hits.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let SyntheticSpec {
        seed,
        num_classes: c,
        seq_len: t,
        vocab_size: v,
        samples_per_class: per,
        motif_len: m,
    } = *spec;
    if c < 2 || per == 0 {
        return Err(Error::InvalidDataset(format!(
            "need at least 2 classes and 1 sample per class, got {c} x {per}"
        )));
    }
    if m == 0 || v < 2 + c * m {
        return Err(Error::VocabularyTooSmall {
            vocab_size: v,
            num_classes: c,
            motif_len: m,
        });
    }
    if t < m + 1 {
        return Err(Error::InvalidDataset(format!(
            "seq_len {t} cannot hold CLS plus a motif of length {m}"
        )));
    }
    let motifs: Vec<Vec<u32>> = (0..c).map(|k| motif(k, m)).collect();
    let mut r = rng::stream(seed, "synthetic");
    let mut samples = Vec::with_capacity(c * per);
    for _ in 0..per {
        for (label, own) in motifs.iter().enumerate() {
            let tokens = loop {
                let mut seq = vec![CLS_TOKEN; t];
                for tok in seq.iter_mut().skip(1) {
                    *tok = r.random_range(1..v as u32);
                }
                let at = r.random_range(1..=t - m);
                seq[at..at + m].copy_from_slice(own);
                let clash = motifs
                    .iter()
                    .enumerate()
                    .any(|(k, mk)| k != label && contains(&seq, mk));
                if !clash {
                    break seq;
                }
            };
            samples.push(Sample { tokens, label });
        }
    }
    let n = samples.len();
    Ok(LabeledDataset {
        samples,
        splits: vec![Split::Train; n],
        num_classes: c,
        vocab_size: v,
        seq_len: t,
        provenance: Provenance::Synthetic(spec.clone()),
    })
}
