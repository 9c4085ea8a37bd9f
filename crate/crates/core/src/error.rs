use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence length {n} exceeds maximum {l_max}")]
    LengthExceeded { n: usize, l_max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("permutation enumeration supports at most {max} tokens, got {n}")]
    EnumerationCapacity { n: usize, max: usize },
    #[error("insufficient data: need at least {needed} records, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("Cholesky factorization failed even with jitter {jitter:e}")]
    Cholesky { jitter: f64 },
    #[error("model has not been trained")]
    Untrained,
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
    #[error("character {ch:?} is not in the codec alphabet")]
    UnknownCharacter { ch: char },
    #[error("unknown prompt id {0:?}")]
    UnknownPrompt(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("endpoint reported failure: {0}")]
    Endpoint(String),
    #[error("endpoint timed out after {0} ms")]
    Timeout(u64),
    #[error("scoring text #{index} failed: {source}")]
    Scoring {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint config hash {found} does not match config hash {expected}")]
    ConfigHashMismatch { expected: String, found: String },
    #[error("malformed log: {0}")]
    Log(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
