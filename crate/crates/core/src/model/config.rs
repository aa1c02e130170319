use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    PreLn,
    PostLn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::PreLn => "pre_ln",
            Variant::PostLn => "post_ln",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

/// One of the two LayerNorm positions inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LnSite {
    Ln1,
    Ln2,
}

impl LnSite {
    pub const BOTH: [LnSite; 2] = [LnSite::Ln1, LnSite::Ln2];

    pub fn name(self) -> &'static str {
        match self {
            LnSite::Ln1 => "ln1",
            LnSite::Ln2 => "ln2",
        }
    }
}

impl fmt::Display for LnSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A LayerNorm site; `layer` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SiteId {
    pub layer: usize,
    pub site: LnSite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    None,
    All,
    Early,
    Middle,
    Later,
    Explicit,
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::None => "none",
            AblationMode::All => "all",
            AblationMode::Early => "early",
            AblationMode::Middle => "middle",
            AblationMode::Later => "later",
            AblationMode::Explicit => "explicit",
        })
    }
}

/// Which LayerNorm sites lose their affine parameters.
///
/// Group modes disable both sites of every layer in the group; `Explicit`
/// disables exactly `explicit_sites`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub mode: AblationMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explicit_sites: Vec<SiteId>,
}

impl AblationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn mode(mode: AblationMode) -> Self {
        Self {
            mode,
            explicit_sites: Vec::new(),
        }
    }

    pub fn explicit(sites: impl IntoIterator<Item = SiteId>) -> Self {
        Self {
            mode: AblationMode::Explicit,
            explicit_sites: sites.into_iter().collect(),
        }
    }

    /// Resolved site set for an `num_layers`-layer model.
    pub fn resolve(&self, num_layers: usize) -> Result<BTreeSet<SiteId>> {
        let layers: Vec<usize> = match self.mode {
            AblationMode::None => Vec::new(),
            AblationMode::All => (1..=num_layers).collect(),
            AblationMode::Early => layer_groups(num_layers)?.early,
            AblationMode::Middle => layer_groups(num_layers)?.middle,
            AblationMode::Later => layer_groups(num_layers)?.later,
            AblationMode::Explicit => {
                let mut out = BTreeSet::new();
                for s in &self.explicit_sites {
                    if s.layer == 0 || s.layer > num_layers {
                        return Err(Error::AblationSiteOutOfRange {
                            layer: s.layer,
                            num_layers,
                        });
                    }
                    out.insert(*s);
                }
                return Ok(out);
            }
        };
        Ok(layers
            .into_iter()
            .flat_map(|layer| LnSite::BOTH.map(|site| SiteId { layer, site }))
            .collect())
    }
}

/// Depth-wise partition of layers `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerGroups {
    pub early: Vec<usize>,
    pub middle: Vec<usize>,
    pub later: Vec<usize>,
}

/// Splits `1..=n` into three contiguous groups of sizes `⌈n/3⌉`,
/// `⌈(n−e)/2⌉` and the remainder.
pub fn layer_groups(n: usize) -> Result<LayerGroups> {
    if n < 3 {
        return Err(Error::TooFewLayers(n));
    }
    let e = n.div_ceil(3);
    let m = (n - e).div_ceil(2);
    Ok(LayerGroups {
        early: (1..=e).collect(),
        middle: (e + 1..=e + m).collect(),
        later: (e + m + 1..=n).collect(),
    })
}

fn default_epsilon() -> f64 {
    1e-5
}

fn default_init_std() -> f64 {
    0.02
}

fn default_embed_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_epsilon")]
    pub ln_epsilon: f64,
    /// Standard deviation of linear-layer weights at initialization.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    /// Standard deviation of token and positional embeddings.
    #[serde(default = "default_embed_std")]
    pub embed_std: f64,
    #[serde(default)]
    pub ablation: AblationSpec,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        for (name, v) in [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("ffn_hidden", self.ffn_hidden),
            ("vocab_size", self.vocab_size),
            ("seq_len", self.seq_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.num_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if !(self.ln_epsilon > 0.0) {
            return bad(format!("ln_epsilon must be > 0, got {}", self.ln_epsilon));
        }
        if !(self.init_std >= 0.0) || !(self.embed_std >= 0.0) {
            return bad("initialization scales must be nonnegative".into());
        }
        self.ablation.resolve(self.num_layers)?;
        Ok(())
    }
}
