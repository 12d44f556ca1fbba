use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected length {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("loss `{0}` is not differentiable")]
    NonDifferentiableLoss(&'static str),

    #[error("loss `{0}` has no Lipschitz constant")]
    NoLipschitzConstant(&'static str),

    #[error("degenerate label space: margin losses need at least 2 classes, got {0}")]
    DegenerateLabelSpace(usize),

    #[error("invalid attack radius {0}")]
    InvalidRadius(f64),

    #[error("grid search supports at most {max} input dimensions, got {got}")]
    DimensionTooLarge { max: usize, got: usize },

    #[error("dataset binding mismatch: {0}")]
    Binding(String),

    #[error("training diverged at round {round}")]
    TrainingDiverged { round: usize },

    #[error("invalid strategy pool: {0}")]
    InvalidPool(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for command-line front ends: 2 for usage
    /// errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Short machine-readable tag, used in error manifests.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InputShape { .. } => "input_shape",
            Error::InvalidArchitecture(_) => "invalid_architecture",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::NonDifferentiableLoss(_) => "non_differentiable_loss",
            Error::NoLipschitzConstant(_) => "no_lipschitz_constant",
            Error::DegenerateLabelSpace(_) => "degenerate_label_space",
            Error::InvalidRadius(_) => "invalid_radius",
            Error::DimensionTooLarge { .. } => "dimension_too_large",
            Error::Binding(_) => "binding",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::InvalidPool(_) => "invalid_pool",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Usage(_) => "usage",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
