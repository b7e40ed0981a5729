use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum LremError {
    #[error("duplicate surface token `{0}`")]
    DuplicateToken(String),

    #[error("surface token `{0}` collides with a special token")]
    SpecialCollision(String),

    #[error("out-of-vocabulary word `{0}`")]
    OutOfVocabulary(String),

    #[error("sequence of length {len} exceeds max length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token at position {0} is not <emb>")]
    NotEmbPosition(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("index fingerprint does not match checkpoint")]
    FingerprintMismatch,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LremError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LremError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for validation errors, 2 for runtime or numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            LremError::Config(_)
            | LremError::InvalidArgument(_)
            | LremError::OutOfVocabulary(_)
            | LremError::DuplicateToken(_)
            | LremError::SpecialCollision(_) => 1,
            LremError::Io { .. } | LremError::Format { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LremError>;
