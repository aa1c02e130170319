use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },

    #[error("variable is not on this tape")]
    NotOnTape,

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("token id {token} out of range for vocabulary of {vocab_size}")]
    InvalidToken { token: u32, vocab_size: usize },

    #[error("ablation site layer {layer} out of range for {num_layers} layers")]
    AblationSiteOutOfRange { layer: usize, num_layers: usize },

    #[error("layer grouping needs at least 3 layers, got {0}")]
    TooFewLayers(usize),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("vocabulary of {vocab_size} cannot host {num_classes} disjoint motifs of length {motif_len}")]
    VocabularyTooSmall {
        vocab_size: usize,
        num_classes: usize,
        motif_len: usize,
    },

    #[error("per-class noise injection requires a target class")]
    MissingTargetClass,

    #[error("class {0} has no samples to stratify")]
    EmptyClass(usize),

    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("unknown tokens: {}", .0.join(", "))]
    UnknownTokens(Vec<String>),

    #[error("split is empty")]
    EmptySplit,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("no prediction for manifest sample {0}")]
    MissingPrediction(usize),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{group} run failed: {source}")]
    GroupRun {
        group: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
