use thiserror::Error;

/// Errors produced by the scoring pipeline and its file formats.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("densities are defined on different grids")]
    GridMismatch,

    #[error("no features available to score")]
    NoFeaturesAvailable,

    #[error("not found: {0}")]
    NotFound(String),

    #[error("cannot impute feature `{feature}`: cohort `{cohort}` has no present values")]
    ImputationImpossible { feature: String, cohort: String },

    #[error("hour {got} pushed out of order (expected {expected})")]
    OutOfOrder { expected: i64, got: i64 },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("incompatible model: {0}")]
    IncompatibleModel(String),

    #[error("corrupted model{}: {message}", feature.as_ref().map(|f| format!(" (feature `{f}`)")).unwrap_or_default())]
    ModelParse {
        feature: Option<String>,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
