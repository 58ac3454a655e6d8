use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: String,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),

    #[error("weight file {path}: {msg}")]
    WeightFile { path: PathBuf, msg: String },

    #[error("tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor `{0}` in weight file")]
    MissingWeight(String),

    #[error("image: {0}")]
    Image(String),

    #[error("no C3AH layer `{wanted}`; available: {available:?}")]
    UnknownLayer {
        wanted: String,
        available: Vec<String>,
    },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }
}
