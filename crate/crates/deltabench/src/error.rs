use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate article id `{0}`")]
    DuplicateArticleId(String),

    #[error("duplicate passage id `{0}`")]
    DuplicatePassageId(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("provider transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },

    #[error("provider returned vector of dimension {got}, expected {expected}")]
    WrongDimension { expected: usize, got: usize },

    #[error("generation feature missing: provider cannot expose hidden states")]
    FeatureMissing,

    #[error("judge returned an unparseable reply: {0:?}")]
    JudgeFormat(String),

    #[error("malformed generation output: {message}; raw: {raw:?}")]
    MalformedGeneration { message: String, raw: String },

    #[error("generation rejected: {0}")]
    GenerationRejected(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index persistence error: {0}")]
    IndexFormat(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),
}

pub type Result<T> = std::result::Result<T, Error>;
