use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the toolkit. Each variant names the stage that failed
/// so the command line can attribute a failure to its module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("corpus error in dialogue {dialogue_id}: {message}")]
    Corpus { dialogue_id: String, message: String },

    #[error("turn index {index} out of range for dialogue {dialogue_id} ({user_turns} user turns)")]
    TurnOutOfRange {
        dialogue_id: String,
        index: usize,
        user_turns: usize,
    },

    #[error("malformed record at {path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("decoder error: {0}")]
    Decode(String),

    #[error("backend {endpoint} failed after {attempts} attempts: {message}")]
    Remote {
        endpoint: String,
        attempts: u32,
        message: String,
    },

    #[error("state assembly error: {0}")]
    Assembly(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Name of the module a failure originated in.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::Json { .. } | Error::Record { .. } => "io",
            Error::Schema(_) => "schema",
            Error::Corpus { .. } | Error::TurnOutOfRange { .. } => "corpus",
            Error::Decode(_) | Error::Remote { .. } => "decoders",
            Error::Assembly(_) => "state",
            Error::Eval(_) => "evalkit",
            Error::Config(_) => "config",
        }
    }
}
