// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use memlab_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid model config: {0}")]
    ModelConfig(String),

    #[error("invalid intervention: {0}")]
    Intervention(String),

    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("token id {id} outside vocabulary of {vocab}")]
    InvalidToken { id: u32, vocab: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("plant plan needs {needed} tokens but the budget is {budget}")]
    Budget { needed: usize, budget: usize },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("corrupt {what}: {msg}")]
    Corrupt { what: &'static str, msg: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("record is not fully memorized (score {matched}/{total})")]
    NotMemorized { matched: usize, total: usize },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input {path}: run `{stage}` first")]
    MissingInput { stage: &'static str, path: PathBuf },

    #[error("artifact {path} changed since stage `{stage}` wrote it")]
    DigestMismatch { stage: String, path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 missing input, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ModelConfig(_) => 2,
            Error::MissingInput { .. } | Error::DigestMismatch { .. } => 3,
            Error::Divergence { .. } | Error::Tensor(TensorError::NonFinite { .. }) => 4,
            _ => 1,
        }
    }
}
