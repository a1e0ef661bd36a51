use std::path::PathBuf;

use thiserror::Error;

/// Failures talking to an external service (retriever, NLI model, generator).
///
/// Every variant is retriable; callers decide how many times.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{service} unreachable: {message}")]
    Unreachable { service: &'static str, message: String },
    #[error("{service} returned a malformed response: {message}")]
    Malformed { service: &'static str, message: String },
    #[error("{service} failed after {attempts} attempts: {last}")]
    Exhausted {
        service: &'static str,
        attempts: u32,
        last: String,
    },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate doc_id at line {line}: {doc_id}")]
    DuplicateDocId { line: usize, doc_id: String },
    #[error("mixed perspectives in one pair file: expected {expected}, found {found}")]
    MixedPerspectives { expected: String, found: String },
    #[error("invalid record: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CitationError {
    #[error("citation [{index}] is outside the mapping domain")]
    OutsideDomain { index: usize },
    #[error("citation [{index}] is out of range for {n} documents")]
    OutOfRange { index: usize, n: usize },
    #[error("mapping indices must be distinct and >= 1: {0:?}")]
    InvalidMapping(Vec<usize>),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Citation(#[from] CitationError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
