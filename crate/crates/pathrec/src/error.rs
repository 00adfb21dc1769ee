//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{file}:{line}: {message}")]
    MalformedRow {
        file: String,
        line: usize,
        message: String,
    },

    #[error("unknown metadata type `{found}` for item `{item}` (declared types: {declared:?})")]
    UnknownMetadataType {
        item: String,
        found: String,
        declared: Vec<String>,
    },

    #[error("empty training graph")]
    EmptyTrainingGraph,

    #[error("entity id {0} out of range")]
    EntityOutOfRange(usize),

    #[error("relation id {0} out of range")]
    RelationOutOfRange(usize),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("cold-start history required")]
    EmptyHistory,

    #[error("mock provider has no response for user `{0}`")]
    MockResponseMissing(String),

    #[error("provider `{provider}` failed after {attempts} attempts: {message}")]
    ProviderFailed {
        provider: String,
        attempts: u32,
        message: String,
    },

    #[error("non-finite loss at epoch {0}")]
    DivergedAtEpoch(usize),

    #[error("non-finite gradient in episode {0}")]
    NonFiniteGradient(usize),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("path horizon {0} exceeded")]
    HorizonExceeded(usize),

    #[error("empty action set")]
    EmptyActionSet,

    #[error("need at least {min} interactions to split, got {got}")]
    TooFewInteractions { min: usize, got: usize },

    #[error("config: {0}")]
    Config(String),
}
