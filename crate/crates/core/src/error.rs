use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { path: PathBuf, offset: usize },

    #[error(
        "line counts differ: {left} has {left_lines} lines, {right} has {right_lines} lines"
    )]
    LineCountMismatch {
        left: PathBuf,
        left_lines: usize,
        right: PathBuf,
        right_lines: usize,
    },

    #[error("{path}:{line}: malformed codes entry (expected two space-separated symbols)")]
    BadCodesLine { path: PathBuf, line: usize },

    #[error("{path}:{line}: {detail}")]
    BadModelLine {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("empty {what}")]
    Empty { what: &'static str },

    #[error("vocabulary cap {cap} too small (needs room for the 4 reserved tokens)")]
    VocabCapTooSmall { cap: usize },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("scores/corpus length mismatch: {scores} scores for {corpus} sentences")]
    ScoresLengthMismatch { scores: usize, corpus: usize },

    #[error("segment {segment}: empty reference")]
    EmptyReference { segment: usize },

    #[error("invalid configuration: {detail}")]
    BadConfig { detail: String },

    #[error("unknown parameter path {path}")]
    UnknownParameter { path: String },

    #[error("{path}: unrecognized file type (bad magic bytes)")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("{path}: corrupt file: {detail}")]
    CorruptModel { path: PathBuf, detail: String },

    #[error("parameter {path}: stored shape {found:?} does not match expected {expected:?}")]
    StoredShapeMismatch {
        path: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing gradient for trainable parameter {path}")]
    MissingGrad { path: String },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: u64 },

    #[error("ensemble member {member} has vocab size {found}, expected {expected}")]
    VocabMismatch {
        member: usize,
        expected: usize,
        found: usize,
    },

    #[error(transparent)]
    Tensor(#[from] ape_tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    /// Process exit code: 2 for input/usage problems, 3 for runtime or
    /// numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CoreError::Diverged { .. } | CoreError::Tensor(_) => 3,
            _ => 2,
        }
    }
}
