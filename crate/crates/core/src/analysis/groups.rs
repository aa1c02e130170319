use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, NoisyLabelRecord};
use crate::metrics::MetricsSnapshot;
use crate::model::{AblationMode, AblationSpec, Model, ModelConfig, Variant};
use crate::train::{train_until_memorized, TrainConfig, TrainRecord};
use crate::{Error, Result};

/// Builds a model from `config` and `seed` and trains it.
pub fn train_run(
    config: &ModelConfig,
    seed: u64,
    train: &TrainConfig,
    data: &LabeledDataset,
    manifest: &[NoisyLabelRecord],
) -> Result<(Model, TrainRecord)> {
    let mut model = Model::new(config.clone(), seed)?;
    let record = train_until_memorized(&mut model, data, manifest, train)?;
    Ok((model, record))
}

/// Training configuration of a comparison arm: exactly as many epochs as
/// `reference` ran, without early stopping, so every arm sees the same
/// batch sequence.
pub fn matched_epochs(train: &TrainConfig, reference: &TrainRecord) -> TrainConfig {
    TrainConfig {
        max_epochs: reference.last().epoch,
        stop_at_full_train_accuracy: false,
        ..train.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRun {
    pub group: AblationMode,
    pub record: TrainRecord,
    pub final_metrics: MetricsSnapshot,
    pub overfit_gap: f64,
}

/// Orderings of the per-group overfit gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingDiagnostics {
    /// `gap(early) > gap(middle) > gap(later)`.
    pub early_gt_middle_gt_later: bool,
    /// `gap(early) < gap(middle) < gap(later)`.
    pub early_lt_middle_lt_later: bool,
    /// The ordering expected for the variant: descending for Pre-LN,
    /// ascending for Post-LN.
    pub expected_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAblationReport {
    pub variant: Variant,
    pub runs: Vec<GroupRun>,
    pub identical_init: bool,
    pub identical_batch_order: bool,
    pub ordering: OrderingDiagnostics,
}

impl GroupAblationReport {
    pub fn run(&self, group: AblationMode) -> Option<&GroupRun> {
        self.runs.iter().find(|r| r.group == group)
    }
}

pub const GROUPS: [AblationMode; 5] = [
    AblationMode::None,
    AblationMode::All,
    AblationMode::Early,
    AblationMode::Middle,
    AblationMode::Later,
];

/// Trains one model per group with identical data, seeds and
/// configuration apart from the ablation. The unablated run trains until
/// memorized; the ablated runs train for the same number of epochs.
pub fn run_group_ablation_experiment(
    base: &ModelConfig,
    seed: u64,
    train: &TrainConfig,
    data: &LabeledDataset,
    manifest: &[NoisyLabelRecord],
) -> Result<GroupAblationReport> {
    if base.num_layers < 3 {
        return Err(Error::TooFewLayers(base.num_layers));
    }
    let mut runs: Vec<GroupRun> = Vec::with_capacity(GROUPS.len());
    for group in GROUPS {
        let cfg = ModelConfig {
            ablation: AblationSpec::mode(group),
            ..base.clone()
        };
        let arm = match runs.first() {
            Some(reference) => matched_epochs(train, &reference.record),
            None => train.clone(),
        };
        let (_, record) =
            train_run(&cfg, seed, &arm, data, manifest).map_err(|e| Error::GroupRun {
                group: group.to_string(),
                source: Box::new(e),
            })?;
        let final_metrics = record.last().metrics.clone();
        runs.push(GroupRun {
            group,
            overfit_gap: final_metrics.overfit_gap,
            final_metrics,
            record,
        });
    }
    let same = |f: fn(&TrainRecord) -> &String| runs.iter().all(|r| f(&r.record) == f(&runs[0].record));
    let identical_init = same(|r| &r.init_hash);
    let identical_batch_order = same(|r| &r.batch_order_hash);
    let gap = |g| runs.iter().find(|r| r.group == g).map(|r| r.overfit_gap).unwrap();
    let (e, m, l) = (
        gap(AblationMode::Early),
        gap(AblationMode::Middle),
        gap(AblationMode::Later),
    );
    let desc = e > m && m > l;
    let asc = e < m && m < l;
    Ok(GroupAblationReport {
        variant: base.variant,
        identical_init,
        identical_batch_order,
        ordering: OrderingDiagnostics {
            early_gt_middle_gt_later: desc,
            early_lt_middle_lt_later: asc,
            expected_holds: match base.variant {
                Variant::PreLn => desc,
                Variant::PostLn => asc,
            },
        },
        runs,
    })
}
