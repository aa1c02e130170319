//! Experiment runner: declarative configs, the six pipelines, run
//! directories with hashed manifests, and self-contained SVG reports.

use std::path::PathBuf;

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod svg;

pub use artifacts::{FileEntry, Manifest, RunDir};
pub use config::{ExperimentConfig, Pipeline};
pub use pipeline::{run_experiment, RunOutcome};
pub use report::emit_report;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("invalid config: {0}")]
    Invalid(String),

    #[error("missing artifact {name} at {}", path.display())]
    MissingArtifact { name: String, path: PathBuf },

    #[error("artifact {name} does not match its manifest hash")]
    CorruptArtifact { name: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{name}: {source}")]
    Decode {
        name: String,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] lnlab_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
