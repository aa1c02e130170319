use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::numerics::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub tokens: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic(super::synthetic::SyntheticSpec),
    Csv(String),
}

/// Fixed-length token sequences with class labels and split tags. A
/// sample's id is its index in `samples`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits.len() != self.samples.len() {
            return Err(Error::InvalidDataset(format!(
                "{} split tags for {} samples",
                self.splits.len(),
                self.samples.len()
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.num_classes {
                return Err(Error::ClassOutOfRange {
                    index: s.label,
                    num_classes: self.num_classes,
                });
            }
            if s.tokens.len() != self.seq_len {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has length {}, expected {}",
                    s.tokens.len(),
                    self.seq_len
                )));
            }
            if let Some(&t) = s.tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
                return Err(Error::InvalidToken {
                    token: t,
                    vocab_size: self.vocab_size,
                });
            }
        }
        Ok(())
    }
}

/// Split proportions `(train, val, test)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        Self { train, val, test }
    }

    fn check(&self) -> Result<[f64; 3]> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDataset(format!(
                "split ratios must be nonnegative and sum to 1, got {r:?}"
            )));
        }
        Ok(r)
    }
}

/// Largest-remainder allocation of `n` items to the three ratios.
fn allocate(n: usize, r: [f64; 3]) -> [usize; 3] {
    let exact = r.map(|p| p * n as f64);
    let mut counts = exact.map(|x| (x + 1e-9).floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if r[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

fn assign(splits: &mut [Split], ids: &[usize], counts: [usize; 3]) {
    let tags = [Split::Train, Split::Val, Split::Test];
    let mut it = ids.iter();
    for (tag, n) in tags.into_iter().zip(counts) {
        for &i in it.by_ref().take(n) {
            splits[i] = tag;
        }
    }
}

/// Seeded train/val/test assignment. Stratified splitting allocates each
/// class separately so every split holds each class within one sample of
/// its proportional share.
pub fn split_dataset(
    dataset: &LabeledDataset,
    ratios: SplitRatios,
    seed: u64,
    stratified: bool,
) -> Result<LabeledDataset> {
    let r = ratios.check()?;
    let mut out = dataset.clone();
    let mut rng = rng::stream(seed, "split");
    if stratified {
        let mut by_class = vec![Vec::new(); dataset.num_classes];
        for (i, s) in dataset.samples.iter().enumerate() {
            by_class[s.label].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClass(c));
        }
        for ids in &mut by_class {
            ids.shuffle(&mut rng);
            assign(&mut out.splits, ids, allocate(ids.len(), r));
        }
    } else {
        let mut ids: Vec<usize> = (0..dataset.len()).collect();
        ids.shuffle(&mut rng);
        assign(&mut out.splits, &ids, allocate(ids.len(), r));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_sums_to_n() {
        for n in 0..50 {
            let c = allocate(n, [0.8, 0.1, 0.1]);
            assert_eq!(c.iter().sum::<usize>(), n);
        }
        assert_eq!(allocate(7, [1.0, 0.0, 0.0]), [7, 0, 0]);
        assert_eq!(allocate(100, [0.8, 0.1, 0.1]), [80, 10, 10]);
    }
}
