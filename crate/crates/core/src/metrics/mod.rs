//! Noisy-label outcome scores, accuracies and the overfit gap.
//!
//! Scores are kept as exact `count / total` ratios; percentages and their
//! two-decimal export strings are derived on demand.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::NoisyLabelRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Memorized,
    Recovered,
    Random,
}

/// Exact fraction `count / total` with `total > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub count: usize,
    pub total: usize,
}

impl Ratio {
    pub fn new(count: usize, total: usize) -> Option<Self> {
        (total > 0 && count <= total).then_some(Self { count, total })
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.count as f64 / self.total as f64
    }

    /// Percentage in hundredths, rounded half to even using integer
    /// arithmetic only.
    pub fn hundredths(&self) -> u64 {
        let num = 10_000 * self.count as u64;
        let den = self.total as u64;
        let (q, r) = (num / den, num % den);
        match (2 * r).cmp(&den) {
            std::cmp::Ordering::Greater => q + 1,
            std::cmp::Ordering::Equal => q + (q & 1),
            std::cmp::Ordering::Less => q,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.hundredths();
        write!(f, "{}.{:02}", h / 100, h % 100)
    }
}

pub const NOT_APPLICABLE: &str = "N/A";

/// Two-decimal percentage, or [`NOT_APPLICABLE`].
pub fn format_score(score: Option<Ratio>) -> String {
    score.map_or_else(|| NOT_APPLICABLE.to_string(), |r| r.to_string())
}

/// Memorized iff the prediction is the injected label, Recovered iff it is
/// the true label, Random otherwise. Output follows manifest order.
pub fn classify_noisy_outcomes(
    predictions: &BTreeMap<usize, usize>,
    manifest: &[NoisyLabelRecord],
) -> Result<Vec<Outcome>> {
    manifest
        .iter()
        .map(|rec| {
            let &p = predictions
                .get(&rec.sample_id)
                .ok_or(Error::MissingPrediction(rec.sample_id))?;
            Ok(if p == rec.noisy_label {
                Outcome::Memorized
            } else if p == rec.true_label {
                Outcome::Recovered
            } else {
                Outcome::Random
            })
        })
        .collect()
}

fn share(outcomes: &[Outcome], kind: Outcome) -> Option<Ratio> {
    Ratio::new(
        outcomes.iter().filter(|&&o| o == kind).count(),
        outcomes.len(),
    )
}

/// `None` for an empty manifest.
pub fn memorization_score(outcomes: &[Outcome]) -> Option<Ratio> {
    share(outcomes, Outcome::Memorized)
}

pub fn recovery_score(outcomes: &[Outcome]) -> Option<Ratio> {
    share(outcomes, Outcome::Recovered)
}

pub fn random_prediction_score(outcomes: &[Outcome]) -> Option<Ratio> {
    share(outcomes, Outcome::Random)
}

/// Train minus test accuracy, in percentage points.
pub fn overfit_gap(train_accuracy: f64, learning_accuracy: f64) -> f64 {
    train_accuracy - learning_accuracy
}

/// Metrics of one frozen checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub learning_accuracy: Ratio,
    pub train_accuracy: Ratio,
    pub memorization: Option<Ratio>,
    pub recovery: Option<Ratio>,
    pub random_prediction: Option<Ratio>,
    pub overfit_gap: f64,
}

impl MetricsSnapshot {
    pub fn new(learning_accuracy: Ratio, train_accuracy: Ratio, outcomes: &[Outcome]) -> Self {
        Self {
            learning_accuracy,
            train_accuracy,
            memorization: memorization_score(outcomes),
            recovery: recovery_score(outcomes),
            random_prediction: random_prediction_score(outcomes),
            overfit_gap: overfit_gap(train_accuracy.percent(), learning_accuracy.percent()),
        }
    }
}
