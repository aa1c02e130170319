//! Transformer classifier with Pre-LN or Post-LN blocks and per-site
//! LayerNorm affine ablation.

pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod transformer;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{
    layer_groups, AblationMode, AblationSpec, Activation, LayerGroups, LnSite, ModelConfig,
    SiteId, Variant,
};
pub use layers::{
    ffn_forward, layer_norm_forward, mhsa_forward, AttentionWeights, FfnWeights, LayerNormParams,
};
pub use transformer::{
    post_ln_block, pre_ln_block, BlockSpec, BlockVars, BoundParams, ForwardPass, LayerTaps, Model,
};
