use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid parameter `{name}`: {msg}")]
    Parameter { name: &'static str, msg: String },

    #[error("point ({x}, {y}) lies outside the {side} m window")]
    OutOfWindow { x: f64, y: f64, side: f64 },

    #[error("degenerate descriptor: {0}")]
    Degenerate(String),

    #[error("insufficient structure: {found} points survive extraction, need at least {needed}")]
    InsufficientStructure { found: usize, needed: usize },

    #[error("keyframe id {0} already present or not increasing")]
    DuplicateId(u64),

    #[error("unknown keyframe id {0}")]
    UnknownId(u64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, msg: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            msg: msg.into(),
        }
    }
}
