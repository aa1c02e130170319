//! The six experiment pipelines. Each writes its data artifacts and
//! `summary.json` into a run directory; plots and `report.txt` are rendered
//! from those files by [`crate::report::emit_report`].

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use lnlab_core::analysis::{
    gradient_profile, matched_epochs, run_group_ablation_experiment, train_run, write_gradient_csv,
    DominanceReport, GradientNormProfile, OrderingDiagnostics, RatioProfile, DOMINANCE_TOLERANCE,
};
use lnlab_core::bounds::{evaluate_bounds, verification_config, SampleBoundReport};
use lnlab_core::data::{write_manifest_csv, Injection, LabeledDataset, NoiseSpec, Split};
use lnlab_core::metrics::MetricsSnapshot;
use lnlab_core::model::{AblationMode, AblationSpec, Model, ModelConfig, Variant};
use lnlab_core::numerics::rng::{derive_seed, indexed_stream};
use lnlab_core::numerics::PowerIterationOptions;
use lnlab_core::train::{write_epoch_csv, TrainConfig, TrainRecord};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::artifacts::{Manifest, RunDir, SUMMARY};
use crate::config::{stream_seed, ExperimentConfig, Pipeline, SCHEMA_VERSION};
use crate::report::emit_report;
use crate::Result;

pub const WITH_LN: &str = "with_ln";
pub const LN_REMOVED: &str = "ln_removed";

/// One trained model whose artifacts live in `dir`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEntry {
    pub variant: Variant,
    pub arm: String,
    pub dir: String,
    /// `gradients.csv` and `gradients.json` were written.
    pub profiled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub samples: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub class_counts: Vec<usize>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub noise: NoiseSpec,
    pub noisy_samples: usize,
    pub empty_noise_warning: bool,
}

impl DataSummary {
    fn new(data: &LabeledDataset, noise: &NoiseSpec, inj: &Injection) -> Self {
        Self {
            source: format!("{:?}", data.provenance),
            samples: data.len(),
            num_classes: data.num_classes,
            vocab_size: data.vocab_size,
            seq_len: data.seq_len,
            class_counts: data.class_counts(),
            train: data.indices(Split::Train).len(),
            val: data.indices(Split::Val).len(),
            test: data.indices(Split::Test).len(),
            noise: *noise,
            noisy_samples: inj.manifest.len(),
            empty_noise_warning: inj.empty_warning,
        }
    }
}

/// Final state of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub variant: Variant,
    pub arm: String,
    pub ablation: AblationMode,
    pub epochs: usize,
    pub memorization_complete: bool,
    pub final_metrics: MetricsSnapshot,
    pub init_hash: String,
    pub batch_order_hash: String,
}

impl ArmSummary {
    fn new(variant: Variant, arm: &str, ablation: AblationMode, record: &TrainRecord) -> Self {
        Self {
            variant,
            arm: arm.to_string(),
            ablation,
            epochs: record.last().epoch,
            memorization_complete: record.memorization_complete,
            final_metrics: record.last().metrics.clone(),
            init_hash: record.init_hash.clone(),
            batch_order_hash: record.batch_order_hash.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub variant: Variant,
    pub arm: String,
    pub dominance: DominanceReport,
    pub ratios: RatioProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub variant: Variant,
    pub with_ln: ArmSummary,
    pub ln_removed: ArmSummary,
    pub overfit_gap_with_ln: f64,
    pub overfit_gap_ln_removed: f64,
    /// LN-removed minus with-LN gap, in percentage points.
    pub overfit_gap_change: f64,
    /// `None` without noisy samples.
    pub memorization_dropped: Option<bool>,
    pub recovery_rose: Option<bool>,
    pub test_accuracy_dropped: bool,
    pub identical_init: bool,
    pub identical_batch_order: bool,
    pub profile_with_ln: ProfileSummary,
    pub profile_ln_removed: ProfileSummary,
}

/// Mean finite learn/mem ratio of the with-LN models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioComparison {
    pub pre_ln_mean: Option<f64>,
    pub post_ln_mean: Option<f64>,
    pub pre_exceeds_post: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationComparison {
    pub variants: Vec<VariantComparison>,
    pub ratio_comparison: RatioComparison,
}

impl AblationComparison {
    pub fn variant(&self, v: Variant) -> Option<&VariantComparison> {
        self.variants.iter().find(|c| c.variant == v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: AblationMode,
    pub epochs: usize,
    pub final_metrics: MetricsSnapshot,
    pub overfit_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSweepEntry {
    pub variant: Variant,
    pub groups: Vec<GroupSummary>,
    pub identical_init: bool,
    pub identical_batch_order: bool,
    pub ordering: OrderingDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepEntry {
    pub fraction: f64,
    pub noisy_samples: usize,
    pub arm: ArmSummary,
}

/// One bound evaluation: a model and a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRun {
    pub variant: Variant,
    /// `random` or `trained`.
    pub source: String,
    pub model_index: usize,
    pub num_layers: usize,
    pub d_model: usize,
    pub seq_len: usize,
    /// Bounds of `T > 1` inputs are an extrapolation of the single-vector
    /// derivation and are labeled as such.
    pub extended: bool,
    pub sample_index: usize,
    pub report: SampleBoundReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundTally {
    pub variant: Option<Variant>,
    pub source: String,
    pub samples: usize,
    pub entries: usize,
    /// Defined bounds exceeded beyond the slack on converged samples.
    pub violations: usize,
    pub undefined_bounds: usize,
    pub unconverged_samples: usize,
    /// Samples whose LN1 and LN2 bound sequences are both nonincreasing.
    pub monotone_samples: usize,
    pub condition_pass_samples: usize,
    pub condition_pass_monotone: usize,
    pub condition_fail_samples: usize,
    pub condition_fail_nonmonotone: usize,
}

impl BoundTally {
    fn add(&mut self, r: &SampleBoundReport) {
        self.samples += 1;
        self.entries += r.entries.len();
        if r.all_converged {
            self.violations += r
                .entries
                .iter()
                .filter(|e| e.bound.is_some() && !e.valid)
                .count();
        } else {
            self.unconverged_samples += 1;
        }
        self.undefined_bounds += r.entries.iter().filter(|e| e.bound.is_none()).count();
        let monotone = r.monotone.iter().all(|&m| m);
        self.monotone_samples += monotone as usize;
        if r.variance_conditions_pass {
            self.condition_pass_samples += 1;
            self.condition_pass_monotone += monotone as usize;
        } else {
            self.condition_fail_samples += 1;
            self.condition_fail_nonmonotone += !monotone as usize;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundVerification {
    pub tallies: Vec<BoundTally>,
    pub slack: f64,
}

impl BoundVerification {
    pub fn tally(&self, variant: Variant, source: &str) -> Option<&BoundTally> {
        self.tallies
            .iter()
            .find(|t| t.variant == Some(variant) && t.source == source)
    }

    /// Violations among random-init models, which satisfy the bounds'
    /// assumptions by construction.
    pub fn random_violations(&self) -> usize {
        self.tallies
            .iter()
            .filter(|t| t.source == "random")
            .map(|t| t.violations)
            .sum()
    }
}

/// Contents of `bounds.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsFile {
    pub verification: BoundVerification,
    pub runs: Vec<BoundRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Results {
    Baseline(Vec<ArmSummary>),
    AblationCompare(AblationComparison),
    GroupSweep(Vec<GroupSweepEntry>),
    GradientProfile(Vec<ProfileSummary>),
    BoundVerify(BoundVerification),
    NoiseSweep(Vec<NoiseSweepEntry>),
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub pipeline: Pipeline,
    pub config: ExperimentConfig,
    /// Resolved architecture per variant.
    pub models: BTreeMap<String, ModelConfig>,
    pub data: Option<DataSummary>,
    pub runs: Vec<RunEntry>,
    pub results: Results,
}

pub struct RunOutcome {
    pub summary: Summary,
    pub manifest: Manifest,
    /// Wall-clock time per named step; never written to disk.
    pub timings: Vec<(String, Duration)>,
}

impl RunOutcome {
    pub fn timing(&self, prefix: &str) -> Duration {
        self.timings
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, d)| *d)
            .sum()
    }
}

struct Lab<'a> {
    cfg: &'a ExperimentConfig,
    run: RunDir,
    runs: Vec<RunEntry>,
    models: BTreeMap<String, ModelConfig>,
    timings: Vec<(String, Duration)>,
}

impl Lab<'_> {
    fn model_config(&mut self, variant: Variant, ablation: AblationSpec, data: &LabeledDataset) -> ModelConfig {
        let base = self.cfg.model.model_config(variant, data);
        self.models.entry(variant.to_string()).or_insert_with(|| base.clone());
        ModelConfig { ablation, ..base }
    }

    fn train_arm(
        &mut self,
        variant: Variant,
        arm: &str,
        ablation: AblationSpec,
        train: &TrainConfig,
        inj: &Injection,
        dir: &str,
    ) -> Result<(Model, TrainRecord)> {
        let cfg = self.model_config(variant, ablation, &inj.dataset);
        log::info!("training {dir} for at most {} epochs", train.max_epochs);
        let start = Instant::now();
        let (model, record) = train_run(&cfg, self.cfg.model_seed(), train, &inj.dataset, &inj.manifest)?;
        self.timings.push((format!("train:{dir}"), start.elapsed()));
        log::info!(
            "{dir}: {} epochs, train {} test {}",
            record.last().epoch,
            record.last().metrics.train_accuracy,
            record.last().metrics.learning_accuracy
        );
        self.write_record(variant, arm, dir, &record)?;
        Ok((model, record))
    }

    fn write_record(&mut self, variant: Variant, arm: &str, dir: &str, record: &TrainRecord) -> Result<()> {
        self.run
            .write_with(&format!("{dir}/metrics.csv"), |b| write_epoch_csv(record, b))?;
        self.run.write_json(&format!("{dir}/record.json"), record)?;
        self.runs.push(RunEntry {
            variant,
            arm: arm.to_string(),
            dir: dir.to_string(),
            profiled: false,
        });
        Ok(())
    }

    fn profile(&mut self, model: &Model, inj: &Injection, dir: &str) -> Result<GradientNormProfile> {
        let start = Instant::now();
        let profile = gradient_profile(
            model,
            &inj.dataset,
            &inj.manifest,
            self.cfg.gradient_profile.learning_cap,
            stream_seed(self.cfg.seed, "profile"),
        )?;
        self.timings.push((format!("profile:{dir}"), start.elapsed()));
        self.run
            .write_with(&format!("{dir}/gradients.csv"), |b| write_gradient_csv(&profile, b))?;
        self.run.write_json(&format!("{dir}/gradients.json"), &profile)?;
        if let Some(r) = self.runs.iter_mut().find(|r| r.dir == dir) {
            r.profiled = true;
        }
        Ok(profile)
    }

    fn prepare(&mut self, noise: &NoiseSpec, manifest_path: &str) -> Result<(LabeledDataset, Injection)> {
        let clean = self.cfg.clean_dataset()?;
        let inj = self.cfg.inject(&clean, noise)?;
        if inj.empty_warning {
            log::warn!("noise fraction {} selected no samples", noise.fraction);
        }
        self.run
            .write_with(manifest_path, |b| write_manifest_csv(&inj.manifest, b))?;
        Ok((clean, inj))
    }
}

fn summary_of(variant: Variant, arm: &str, p: &GradientNormProfile) -> ProfileSummary {
    ProfileSummary {
        variant,
        arm: arm.to_string(),
        dominance: p.dominance(DOMINANCE_TOLERANCE),
        ratios: p.ratios(),
    }
}

fn dir_name(v: Variant) -> String {
    v.to_string()
}

fn baseline(lab: &mut Lab) -> Result<(Option<DataSummary>, Results)> {
    let cfg = lab.cfg;
    let (clean, inj) = lab.prepare(&cfg.noise, "noisy_labels.csv")?;
    let mut arms = Vec::new();
    for &v in &cfg.model.variants {
        let dir = dir_name(v);
        let (_, rec) = lab.train_arm(v, "baseline", cfg.model.ablation.clone(), &cfg.train, &inj, &dir)?;
        arms.push(ArmSummary::new(v, "baseline", cfg.model.ablation.mode, &rec));
    }
    Ok((
        Some(DataSummary::new(&clean, &cfg.noise, &inj)),
        Results::Baseline(arms),
    ))
}

/// With-LN reference trained until memorized; the LN-removed arm trains
/// for the same number of epochs from the same initialization.
fn compare_variant(
    lab: &mut Lab,
    v: Variant,
    noise_dir: &str,
    inj: &Injection,
    profile: bool,
) -> Result<(ArmSummary, ArmSummary, Option<(ProfileSummary, ProfileSummary)>)> {
    let cfg = lab.cfg;
    let base = format!("{noise_dir}{}", dir_name(v));
    let with_dir = format!("{base}/{WITH_LN}");
    let (m_with, r_with) = lab.train_arm(v, WITH_LN, AblationSpec::none(), &cfg.train, inj, &with_dir)?;
    let p_with = profile.then(|| lab.profile(&m_with, inj, &with_dir)).transpose()?;
    let removed_dir = format!("{base}/{LN_REMOVED}");
    let arm_train = matched_epochs(&cfg.train, &r_with);
    let (m_rem, r_rem) = lab.train_arm(
        v,
        LN_REMOVED,
        AblationSpec::mode(AblationMode::All),
        &arm_train,
        inj,
        &removed_dir,
    )?;
    let p_rem = profile.then(|| lab.profile(&m_rem, inj, &removed_dir)).transpose()?;
    let profiles = p_with
        .zip(p_rem)
        .map(|(a, b)| (summary_of(v, WITH_LN, &a), summary_of(v, LN_REMOVED, &b)));
    Ok((
        ArmSummary::new(v, WITH_LN, AblationMode::None, &r_with),
        ArmSummary::new(v, LN_REMOVED, AblationMode::All, &r_rem),
        profiles,
    ))
}

fn ablation_compare(lab: &mut Lab) -> Result<(Option<DataSummary>, Results)> {
    let cfg = lab.cfg;
    let (clean, inj) = lab.prepare(&cfg.noise, "noisy_labels.csv")?;
    let mut variants = Vec::new();
    for &v in &cfg.model.variants {
        let (with_ln, ln_removed, profiles) = compare_variant(lab, v, "", &inj, true)?;
        let (profile_with_ln, profile_ln_removed) = profiles.expect("profiled");
        let (a, b) = (&with_ln.final_metrics, &ln_removed.final_metrics);
        variants.push(VariantComparison {
            variant: v,
            overfit_gap_with_ln: a.overfit_gap,
            overfit_gap_ln_removed: b.overfit_gap,
            overfit_gap_change: b.overfit_gap - a.overfit_gap,
            memorization_dropped: a
                .memorization
                .zip(b.memorization)
                .map(|(x, y)| y.count < x.count),
            recovery_rose: a.recovery.zip(b.recovery).map(|(x, y)| y.count > x.count),
            test_accuracy_dropped: b.learning_accuracy.count < a.learning_accuracy.count,
            identical_init: with_ln.init_hash == ln_removed.init_hash,
            identical_batch_order: with_ln.batch_order_hash == ln_removed.batch_order_hash,
            with_ln,
            ln_removed,
            profile_with_ln,
            profile_ln_removed,
        });
    }
    let mean = |v: Variant| {
        variants
            .iter()
            .find(|c| c.variant == v)
            .and_then(|c| c.profile_with_ln.ratios.mean_finite)
    };
    let (pre, post) = (mean(Variant::PreLn), mean(Variant::PostLn));
    let comparison = AblationComparison {
        variants,
        ratio_comparison: RatioComparison {
            pre_ln_mean: pre,
            post_ln_mean: post,
            pre_exceeds_post: pre.zip(post).map(|(a, b)| a > b),
        },
    };
    lab.run.write_json("comparison.json", &comparison)?;
    Ok((
        Some(DataSummary::new(&clean, &cfg.noise, &inj)),
        Results::AblationCompare(comparison),
    ))
}

fn group_sweep(lab: &mut Lab) -> Result<(Option<DataSummary>, Results)> {
    let cfg = lab.cfg;
    let (clean, inj) = lab.prepare(&cfg.noise, "noisy_labels.csv")?;
    let mut entries = Vec::new();
    for &v in &cfg.model.variants {
        let base = lab.model_config(v, AblationSpec::none(), &inj.dataset);
        log::info!("group sweep for {v}");
        let start = Instant::now();
        let rep = run_group_ablation_experiment(&base, cfg.model_seed(), &cfg.train, &inj.dataset, &inj.manifest)?;
        lab.timings.push((format!("groups:{v}"), start.elapsed()));
        let mut groups = Vec::new();
        for run in &rep.runs {
            let group = run.group.to_string();
            lab.write_record(v, &group, &format!("{}/{group}", dir_name(v)), &run.record)?;
            groups.push(GroupSummary {
                group: run.group,
                epochs: run.record.last().epoch,
                final_metrics: run.final_metrics.clone(),
                overfit_gap: run.overfit_gap,
            });
        }
        let entry = GroupSweepEntry {
            variant: v,
            groups,
            identical_init: rep.identical_init,
            identical_batch_order: rep.identical_batch_order,
            ordering: rep.ordering,
        };
        lab.run.write_json(&format!("{}/groups.json", dir_name(v)), &entry)?;
        entries.push(entry);
    }
    let mut csv = String::from("variant,group,epochs,train_acc,test_acc,mem_score,rec_score,rand_score,overfit_gap\n");
    for e in &entries {
        for g in &e.groups {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                e.variant,
                g.group,
                g.epochs,
                score_columns(&g.final_metrics)
            ));
        }
    }
    lab.run.write("groups.csv", csv.as_bytes())?;
    Ok((
        Some(DataSummary::new(&clean, &cfg.noise, &inj)),
        Results::GroupSweep(entries),
    ))
}

/// `train_acc,test_acc,mem_score,rec_score,rand_score,overfit_gap`.
fn score_columns(m: &MetricsSnapshot) -> String {
    use lnlab_core::metrics::format_score;
    format!(
        "{},{},{},{},{},{}",
        m.train_accuracy,
        m.learning_accuracy,
        format_score(m.memorization),
        format_score(m.recovery),
        format_score(m.random_prediction),
        m.overfit_gap
    )
}

fn gradient_profile_pipeline(lab: &mut Lab) -> Result<(Option<DataSummary>, Results)> {
    let cfg = lab.cfg;
    let (clean, inj) = lab.prepare(&cfg.noise, "noisy_labels.csv")?;
    let mut out = Vec::new();
    for &v in &cfg.model.variants {
        let dir = dir_name(v);
        let (model, _) = lab.train_arm(v, WITH_LN, cfg.model.ablation.clone(), &cfg.train, &inj, &dir)?;
        let p = lab.profile(&model, &inj, &dir)?;
        out.push(summary_of(v, WITH_LN, &p));
    }
    Ok((
        Some(DataSummary::new(&clean, &cfg.noise, &inj)),
        Results::GradientProfile(out),
    ))
}

fn noise_sweep(lab: &mut Lab) -> Result<(Option<DataSummary>, Results)> {
    let cfg = lab.cfg;
    let mut entries = Vec::new();
    let mut data = None;
    let mut csv = String::from(
        "fraction,variant,arm,noisy_samples,epochs,train_acc,test_acc,mem_score,rec_score,rand_score,overfit_gap\n",
    );
    for &fraction in &cfg.noise_sweep.fractions {
        let noise = NoiseSpec { fraction, ..cfg.noise };
        let prefix = format!("noise_{fraction}/");
        let (clean, inj) = lab.prepare(&noise, &format!("{prefix}noisy_labels.csv"))?;
        data.get_or_insert_with(|| DataSummary::new(&clean, &cfg.noise, &inj));
        for &v in &cfg.model.variants {
            let (with_ln, removed, _) = compare_variant(lab, v, &prefix, &inj, false)?;
            for arm in [with_ln, removed] {
                csv.push_str(&format!(
                    "{fraction},{v},{},{},{},{}\n",
                    arm.arm,
                    inj.manifest.len(),
                    arm.epochs,
                    score_columns(&arm.final_metrics)
                ));
                entries.push(NoiseSweepEntry {
                    fraction,
                    noisy_samples: inj.manifest.len(),
                    arm,
                });
            }
        }
    }
    lab.run.write("noise_sweep.csv", csv.as_bytes())?;
    Ok((data, Results::NoiseSweep(entries)))
}

/// Tokens and label of random bound-verification sample `k`.
fn random_sample(seed: u64, tag: &str, k: usize, cfg: &ModelConfig) -> (Vec<u32>, usize) {
    let mut r = indexed_stream(seed, tag, k as u64);
    let tokens = (0..cfg.seq_len)
        .map(|_| r.random_range(0..cfg.vocab_size as u32))
        .collect();
    (tokens, r.random_range(0..cfg.num_classes))
}

fn bound_verify(lab: &mut Lab) -> Result<(Option<DataSummary>, Results)> {
    let cfg = lab.cfg;
    let bv = &cfg.bound_verify;
    let opts = PowerIterationOptions {
        tol: bv.power_tol,
        max_iters: bv.power_max_iters,
        seed: stream_seed(cfg.seed, "bounds/power"),
    };
    let mut runs = Vec::new();
    let mut tallies = Vec::new();
    for &v in &cfg.model.variants {
        let start = Instant::now();
        let mut tally = BoundTally {
            variant: Some(v),
            source: "random".into(),
            ..Default::default()
        };
        for k in 0..bv.models_per_variant {
            let depth = bv.layers[k % bv.layers.len()];
            let width = bv.widths[(k / bv.layers.len()) % bv.widths.len()];
            let mcfg = verification_config(v, depth, width);
            let model = Model::new(mcfg.clone(), derive_seed(cfg.seed, &format!("bounds/{v}/model/{k}")))?;
            for s in 0..bv.samples_per_model {
                let (tokens, label) = random_sample(cfg.seed, &format!("bounds/{v}/model/{k}/samples"), s, &mcfg);
                let report = evaluate_bounds(&model, &tokens, label, &opts, bv.slack)?;
                tally.add(&report);
                runs.push(BoundRun {
                    variant: v,
                    source: "random".into(),
                    model_index: k,
                    num_layers: depth,
                    d_model: width,
                    seq_len: 1,
                    extended: false,
                    sample_index: s,
                    report,
                });
            }
        }
        lab.timings.push((format!("bounds:random:{v}"), start.elapsed()));
        tallies.push(tally);
    }
    let mut data = None;
    if bv.trained {
        let (clean, inj) = lab.prepare(&cfg.noise, "noisy_labels.csv")?;
        data = Some(DataSummary::new(&clean, &cfg.noise, &inj));
        let test = inj.dataset.indices(Split::Test);
        for &v in &cfg.model.variants {
            let dir = format!("trained/{}", dir_name(v));
            let (model, _) = lab.train_arm(v, WITH_LN, AblationSpec::none(), &cfg.train, &inj, &dir)?;
            let mcfg = model.config().clone();
            let mut tally = BoundTally {
                variant: Some(v),
                source: "trained".into(),
                ..Default::default()
            };
            for (s, &i) in test.iter().take(bv.trained_samples).enumerate() {
                let sample = &clean.samples[i];
                let report = evaluate_bounds(&model, &sample.tokens, sample.label, &opts, bv.slack)?;
                tally.add(&report);
                runs.push(BoundRun {
                    variant: v,
                    source: "trained".into(),
                    model_index: 0,
                    num_layers: mcfg.num_layers,
                    d_model: mcfg.d_model,
                    seq_len: mcfg.seq_len,
                    extended: mcfg.seq_len > 1,
                    sample_index: s,
                    report,
                });
            }
            tallies.push(tally);
        }
    }
    let verification = BoundVerification {
        tallies,
        slack: bv.slack,
    };
    lab.run.write_json(
        "bounds.json",
        &BoundsFile {
            verification: verification.clone(),
            runs,
        },
    )?;
    Ok((data, Results::BoundVerify(verification)))
}

/// Runs the configured pipeline into `out`, then renders the report and
/// writes the manifest.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut lab = Lab {
        cfg,
        run: RunDir::create(out)?,
        runs: Vec::new(),
        models: BTreeMap::new(),
        timings: Vec::new(),
    };
    let (data, results) = match cfg.pipeline {
        Pipeline::Baseline => baseline(&mut lab)?,
        Pipeline::AblationCompare => ablation_compare(&mut lab)?,
        Pipeline::GroupSweep => group_sweep(&mut lab)?,
        Pipeline::GradientProfile => gradient_profile_pipeline(&mut lab)?,
        Pipeline::BoundVerify => bound_verify(&mut lab)?,
        Pipeline::NoiseSweep => noise_sweep(&mut lab)?,
    };
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        pipeline: cfg.pipeline,
        config: cfg.clone(),
        models: lab.models,
        data,
        runs: lab.runs,
        results,
    };
    let mut run = lab.run;
    run.write_json(SUMMARY, &summary)?;
    emit_report(&mut run)?;
    let manifest = run.finish()?;
    Ok(RunOutcome {
        summary,
        manifest,
        timings: lab.timings,
    })
}
