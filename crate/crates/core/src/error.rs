//! Error taxonomy shared by every module.
//!
//! Variants map onto the CLI exit-code categories: configuration errors,
//! runtime/data errors, and divergence.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or config value violates a documented precondition.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Config-file parse failure with the offending line number.
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    /// Structurally inconsistent data (labels out of range, layout mismatch
    /// against expectations, non-finite uploads).
    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    /// A call outside an operation's domain (empty batch, missing eval set).
    #[error("domain error: {0}")]
    Domain(String),

    /// Client had no local data this round; the round proceeds without it.
    #[error("client {0} has no local data and is skipped")]
    SkipClient(usize),

    /// No participating client carried weight; nothing to aggregate.
    #[error("empty round: no participating client updates")]
    EmptyRound,

    /// A loss or parameter became non-finite during training.
    #[error("divergence detected at round {round}")]
    Divergence { round: u64 },

    /// The brute-force minimizer failed to reach its gradient tolerance.
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
