use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("unknown instance `{0}`")]
    UnknownInstance(String),

    #[error("job {job} cannot be dispatched: {reason}")]
    IllegalAction { job: usize, reason: &'static str },

    #[error("no legal action: every job is finished")]
    Terminal,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("set2set needs at least one element")]
    EmptySet,

    #[error("softmax needs at least one unmasked entry")]
    AllMasked,

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
