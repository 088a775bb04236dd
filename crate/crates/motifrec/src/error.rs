//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("routing error: unknown domain {0}")]
    Routing(u16),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage error: {0}")]
    Stage(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("pipeline stage `{stage}` failed: {source}")]
    PipelineStage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn in_stage(stage: impl Into<String>, source: Error) -> Self {
        Error::PipelineStage {
            stage: stage.into(),
            source: Box::new(source),
        }
    }
}
