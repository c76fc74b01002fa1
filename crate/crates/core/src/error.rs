//! Crate-wide error type.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// Wrong magic, unsupported version or an unknown enum tag.
    #[error("format error: {0}")]
    Format(String),

    /// Payload ended early or contained undecodable bytes.
    #[error("corrupt data at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    /// A loaded or supplied record violates a type invariant.
    #[error("invalid document {doc_id:?}: {reason}")]
    Validation { doc_id: String, reason: String },

    #[error("dimension mismatch in {context:?}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("token id {0} missing from idf table")]
    MissingIdf(u32),

    #[error("document {doc_id:?} has {found} unused-flagged tokens, budget is {k}")]
    NotEnoughUnused { doc_id: String, found: usize, k: usize },

    #[error("zero-norm row at position {0}")]
    ZeroNorm(usize),

    #[error("attention row (head {head}, row {row}) sums to {sum}, expected 1")]
    NotStochastic { head: usize, row: usize, sum: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("evaluation error: {0}")]
    Eval(String),
}

impl Error {
    pub(crate) fn validation(doc_id: &str, reason: impl Into<String>) -> Self {
        Error::Validation {
            doc_id: doc_id.to_owned(),
            reason: reason.into(),
        }
    }
}
