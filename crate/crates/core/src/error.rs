use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the ranking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate {what} `{id}`")]
    Duplicate { what: &'static str, id: String },

    #[error("rank gap for query `{query_id}`: expected rank {expected}, found {found}")]
    RankGap {
        query_id: String,
        expected: usize,
        found: usize,
    },

    #[error("score/rank inversion for query `{query_id}` at rank {rank}")]
    ScoreInversion { query_id: String, rank: usize },

    #[error(
        "query of {query_len} tokens plus {control_tokens} control tokens does not fit the \
         encoder budget of {model_limit} tokens"
    )]
    QueryTooLong {
        query_len: usize,
        control_tokens: usize,
        model_limit: usize,
    },

    #[error("input of {needed} tokens exceeds the encoder budget of {model_limit}")]
    BudgetExceeded { needed: usize, model_limit: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("document `{0}` not found in corpus")]
    MissingDoc(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{0}")]
    Empty(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
