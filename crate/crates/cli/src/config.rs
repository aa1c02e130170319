//! Declarative experiment configuration.
//!
//! Configs are TOML with an explicit `schema_version`; unknown keys are
//! rejected everywhere. After parsing every default is materialized, so
//! serializing an [`ExperimentConfig`] yields the fully resolved config.

use std::path::{Path, PathBuf};

use lnlab_core::data::{
    generate_synthetic_dataset, inject_noisy_labels, load_csv_dataset, split_dataset, CsvSchema,
    Injection, LabeledDataset, NoiseMode, NoiseSpec, SplitRatios, SyntheticSpec,
};
use lnlab_core::model::{AblationSpec, Activation, ModelConfig, Variant};
use lnlab_core::numerics::rng::derive_seed;
use lnlab_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Baseline,
    AblationCompare,
    GroupSweep,
    GradientProfile,
    BoundVerify,
    NoiseSweep,
}

fn both_variants() -> Vec<Variant> {
    vec![Variant::PostLn, Variant::PreLn]
}
fn d_layers() -> usize {
    6
}
fn d_width() -> usize {
    64
}
fn d_heads() -> usize {
    4
}
fn d_ffn() -> usize {
    128
}
fn d_epsilon() -> f64 {
    1e-5
}
fn d_init_std() -> f64 {
    0.02
}
fn d_embed_std() -> f64 {
    1.0
}

/// Architecture without the data-dependent extents, which are taken from
/// the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Every pipeline runs once per listed variant.
    #[serde(default = "both_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "d_layers")]
    pub num_layers: usize,
    #[serde(default = "d_width")]
    pub d_model: usize,
    #[serde(default = "d_heads")]
    pub num_heads: usize,
    #[serde(default = "d_ffn")]
    pub ffn_hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "d_epsilon")]
    pub ln_epsilon: f64,
    #[serde(default = "d_init_std")]
    pub init_std: f64,
    #[serde(default = "d_embed_std")]
    pub embed_std: f64,
    #[serde(default)]
    pub ablation: AblationSpec,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variants: both_variants(),
            num_layers: d_layers(),
            d_model: d_width(),
            num_heads: d_heads(),
            ffn_hidden: d_ffn(),
            activation: Activation::default(),
            ln_epsilon: d_epsilon(),
            init_std: d_init_std(),
            embed_std: d_embed_std(),
            ablation: AblationSpec::default(),
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, variant: Variant, data: &LabeledDataset) -> ModelConfig {
        ModelConfig {
            variant,
            num_layers: self.num_layers,
            d_model: self.d_model,
            num_heads: self.num_heads,
            ffn_hidden: self.ffn_hidden,
            vocab_size: data.vocab_size,
            seq_len: data.seq_len,
            num_classes: data.num_classes,
            activation: self.activation,
            ln_epsilon: self.ln_epsilon,
            init_std: self.init_std,
            embed_std: self.embed_std,
            ablation: self.ablation.clone(),
        }
    }
}

fn d_motif() -> usize {
    3
}

/// Synthetic corpus; its seed is derived from the experiment seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_classes: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub samples_per_class: usize,
    #[serde(default = "d_motif")]
    pub motif_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
}

fn d_split() -> SplitRatios {
    SplitRatios::new(0.8, 0.0, 0.2)
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "d_split")]
    pub split: SplitRatios,
    #[serde(default = "d_true")]
    pub stratified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSection>,
}

fn d_noise() -> NoiseSpec {
    NoiseSpec {
        mode: NoiseMode::PerClass,
        fraction: 0.01,
        target_class: Some(0),
    }
}

fn d_cap() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientProfileSection {
    /// Maximum test samples in the learning population.
    #[serde(default = "d_cap")]
    pub learning_cap: usize,
}

impl Default for GradientProfileSection {
    fn default() -> Self {
        Self {
            learning_cap: d_cap(),
        }
    }
}

fn d_models() -> usize {
    10
}
fn d_samples() -> usize {
    20
}
fn d_depths() -> Vec<usize> {
    vec![2, 3, 4]
}
fn d_widths() -> Vec<usize> {
    vec![16, 32]
}
fn d_tol() -> f64 {
    1e-8
}
fn d_iters() -> usize {
    5000
}
fn d_slack() -> f64 {
    lnlab_core::bounds::VALIDITY_SLACK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundVerifySection {
    /// Random-init models per variant; model `k` takes depth
    /// `layers[k % L]` and width `widths[(k / L) % W]`.
    #[serde(default = "d_models")]
    pub models_per_variant: usize,
    #[serde(default = "d_samples")]
    pub samples_per_model: usize,
    #[serde(default = "d_depths")]
    pub layers: Vec<usize>,
    #[serde(default = "d_widths")]
    pub widths: Vec<usize>,
    /// Also train one model per variant on the configured data and
    /// evaluate the bounds on its test samples.
    #[serde(default)]
    pub trained: bool,
    #[serde(default = "d_samples")]
    pub trained_samples: usize,
    #[serde(default = "d_tol")]
    pub power_tol: f64,
    #[serde(default = "d_iters")]
    pub power_max_iters: usize,
    #[serde(default = "d_slack")]
    pub slack: f64,
}

impl Default for BoundVerifySection {
    fn default() -> Self {
        Self {
            models_per_variant: d_models(),
            samples_per_model: d_samples(),
            layers: d_depths(),
            widths: d_widths(),
            trained: false,
            trained_samples: d_samples(),
            power_tol: d_tol(),
            power_max_iters: d_iters(),
            slack: d_slack(),
        }
    }
}

fn d_fractions() -> Vec<f64> {
    vec![0.01, 0.02, 0.05]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweepSection {
    #[serde(default = "d_fractions")]
    pub fractions: Vec<f64>,
}

impl Default for NoiseSweepSection {
    fn default() -> Self {
        Self {
            fractions: d_fractions(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub pipeline: Pipeline,
    /// Location only; never part of any output.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    /// Optional only for bound verification on random models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default = "d_noise")]
    pub noise: NoiseSpec,
    /// `seed` is replaced by one derived from the experiment seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub gradient_profile: GradientProfileSection,
    #[serde(default)]
    pub bound_verify: BoundVerifySection,
    #[serde(default)]
    pub noise_sweep: NoiseSweepSection,
}

/// Seed of the named stream of an experiment.
pub fn stream_seed(seed: u64, stream: &str) -> u64 {
    derive_seed(seed, stream)
}

impl ExperimentConfig {
    /// Parses and validates TOML text. `base_dir` anchors relative paths.
    pub fn parse(text: &str, origin: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        if let Some(csv) = cfg.data.as_mut().and_then(|d| d.csv.as_mut()) {
            if csv.path.is_relative() {
                csv.path = base_dir.join(&csv.path);
            }
        }
        cfg.resolve_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Replaces the experiment seed and everything derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.resolve_seeds();
        self
    }

    pub fn with_pipeline(mut self, pipeline: Pipeline) -> Self {
        self.pipeline = pipeline;
        self
    }

    fn resolve_seeds(&mut self) {
        self.train.seed = stream_seed(self.seed, "train");
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if self.model.variants.is_empty() {
            return bad("model.variants: at least one variant is required".into());
        }
        let needs_data = self.pipeline != Pipeline::BoundVerify || self.bound_verify.trained;
        match &self.data {
            None if needs_data => return bad("data: section is required".into()),
            None => {}
            Some(d) => match (&d.synthetic, &d.csv) {
                (Some(_), Some(_)) | (None, None) => {
                    return bad(
                        "data: exactly one of [data.synthetic] or [data.csv] is required".into(),
                    )
                }
                (None, Some(csv)) if !csv.path.is_file() => {
                    return bad(format!("data.csv.path: {} does not exist", csv.path.display()))
                }
                _ => {}
            },
        }
        let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
        if !frac_ok(self.noise.fraction) {
            return bad(format!("noise.fraction: {} not in [0, 1]", self.noise.fraction));
        }
        if let Some(f) = self.noise_sweep.fractions.iter().find(|f| !frac_ok(**f)) {
            return bad(format!("noise_sweep.fractions: {f} not in [0, 1]"));
        }
        let bv = &self.bound_verify;
        if bv.layers.is_empty() || bv.widths.is_empty() || bv.layers.contains(&0) {
            return bad("bound_verify: layers and widths must be nonempty and positive".into());
        }
        if bv.widths.iter().any(|w| w % 2 != 0 || *w == 0) {
            return bad("bound_verify.widths: widths must be even, for two heads".into());
        }
        self.train
            .validate()
            .map_err(|e| CliError::Invalid(format!("train: {e}")))?;
        Ok(())
    }

    /// The dataset before noise injection, split.
    pub fn clean_dataset(&self) -> Result<LabeledDataset> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| CliError::Invalid("data: section is required".into()))?;
        let raw = match (&data.synthetic, &data.csv) {
            (Some(s), _) => generate_synthetic_dataset(&SyntheticSpec {
                seed: stream_seed(self.seed, "data"),
                num_classes: s.num_classes,
                seq_len: s.seq_len,
                vocab_size: s.vocab_size,
                samples_per_class: s.samples_per_class,
                motif_len: s.motif_len,
            })?,
            (None, Some(c)) => load_csv_dataset(&c.path, &c.schema)?,
            (None, None) => unreachable!("validated"),
        };
        Ok(split_dataset(
            &raw,
            data.split,
            stream_seed(self.seed, "split"),
            data.stratified,
        )?)
    }

    pub fn inject(&self, clean: &LabeledDataset, noise: &NoiseSpec) -> Result<Injection> {
        Ok(inject_noisy_labels(
            clean,
            stream_seed(self.seed, "noise"),
            noise,
        )?)
    }

    pub fn model_seed(&self) -> u64 {
        stream_seed(self.seed, "model")
    }
}
