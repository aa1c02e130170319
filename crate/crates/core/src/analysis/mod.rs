//! Gradient-norm profiling at LayerNorm inputs and layer-group ablation
//! sweeps.

pub mod gradients;
pub mod groups;

pub use gradients::{
    all_sites, gradient_profile, ln_input_gradient_norms, per_sample_ln_input_norms,
    ratio_profile, dominance_check, write_gradient_csv, GradientNormProfile, PerSampleNorms,
    PopulationNorms, RatioProfile, DominanceReport, LEARNING_CAP, DOMINANCE_TOLERANCE,
};
pub use groups::{
    matched_epochs, run_group_ablation_experiment, train_run, GroupAblationReport, GroupRun, OrderingDiagnostics,
};
