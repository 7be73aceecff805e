use thiserror::Error;

/// Errors produced anywhere in the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid band configuration: {0}")]
    Band(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite likelihood at observation {index}")]
    NonFinite { index: usize },

    #[error("every mixture component degenerated during training")]
    AllComponentsDegenerate,

    #[error(
        "cue covariance of component {component} is ill-conditioned (condition ~{condition:.3e}); \
         raise the noise variance floor"
    )]
    IllConditioned { component: usize, condition: f64 },

    #[error("band fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("malformed container: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("direction out of range: {0}")]
    OutOfRange(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable category, used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::TooShort { .. } | Error::Shape(_) | Error::InvalidArgument(_) => "invalid_input",
            Error::Band(_) | Error::Config(_) | Error::OutOfRange(_) => "config",
            Error::NonFinite { .. }
            | Error::AllComponentsDegenerate
            | Error::IllConditioned { .. }
            | Error::Undefined(_) => "numerical",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::Io(_) | Error::Wav(hound::Error::IoError(_)) => "io",
            Error::Format(_) | Error::Json(_) | Error::Wav(_) => "format",
        }
    }

    /// Process exit code associated with [`Error::category`].
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "invalid_input" => 2,
            "config" => 3,
            "io" => 4,
            "format" => 5,
            "fingerprint_mismatch" => 6,
            "numerical" => 7,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
