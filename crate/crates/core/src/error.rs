use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parallel files are not aligned: {source_path} has {source_lines} lines, {target_path} has {target_lines}")]
    Alignment {
        source_path: PathBuf,
        target_path: PathBuf,
        source_lines: usize,
        target_lines: usize,
    },

    #[error("invalid UTF-8 in {path} at line {line}")]
    Decode { path: PathBuf, line: usize },

    #[error("invalid sentence: {0}")]
    InvalidSentence(String),

    #[error("domain tag {tag} already present in corpus {domain}")]
    AlreadyTagged { domain: String, tag: String },

    #[error("domain tag {tag} collides with an existing token in corpus {domain}")]
    TagCollision { domain: String, tag: String },

    #[error("synthetic vocabulary too small: need {needed} source types, have {available}")]
    Capacity { needed: usize, available: usize },

    #[error("malformed segmentation: dangling continuation marker in {0:?}")]
    MalformedSegmentation(String),

    #[error("token id {id} out of range for {side} vocabulary of size {size}")]
    VocabularyRange { side: &'static str, id: u32, size: usize },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("stage {stage}, epoch {epoch}: {source}")]
    StageFailed {
        stage: usize,
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("unknown domain {0:?}")]
    UnknownDomain(String),

    #[error("domain {0:?} listed more than once")]
    DuplicateDomain(String),

    #[error("invalid training plan: {0}")]
    InvalidPlan(String),

    #[error("ensemble members disagree on the target vocabulary at id {id}: {left:?} vs {right:?}")]
    IncompatibleVocabulary { id: usize, left: String, right: String },

    #[error("length mismatch: {hypotheses} hypotheses vs {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {what} at line {line}: {message}")]
    Parse {
        what: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("tensor {name} has shape {found:?}, config implies {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("corrupt field: {0}")]
    Corrupt(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
