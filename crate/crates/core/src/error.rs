use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A battery entry, template, or network failed validation.
    #[error("invalid stimulus `{id}`: {reason}")]
    Stimulus { id: String, reason: String },

    #[error("battery schema violation: {0}")]
    Schema(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("token name `{0}` collides with an existing vocabulary entry")]
    NameCollision(String),

    #[error("sequence of length {len} exceeds the model maximum of {max}")]
    Overlength { len: usize, max: usize },

    #[error("position {0} does not hold a [MASK] token")]
    NotMasked(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid grammar: {0}")]
    Grammar(String),

    #[error("invalid training data: {0}")]
    Training(String),

    #[error("non-finite loss at epoch {epoch}: {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("invalid counts: {0}")]
    Counts(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numeric failures map to a distinct process exit code in the CLI.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
