use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),

    #[error("malformed npy header: {0}")]
    MalformedHeader(String),

    #[error("unsupported npy dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("fortran-ordered npy arrays are not supported")]
    FortranOrder,

    #[error("unsupported png: {0}")]
    UnsupportedPng(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at index {0}")]
    NonFiniteInput(usize),

    #[error("too few rows: need at least {needed}, got {rows}")]
    TooFewRows { needed: usize, rows: usize },

    #[error("invalid cluster count {k} for {n} items")]
    BadK { k: usize, n: usize },

    #[error("curve needs at least two scores, got {0}")]
    TooShort(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("oracle failed at step {step}: {source}")]
    OracleFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("oracle unreachable: {0}")]
    Unreachable(String),

    #[error("bad manifest: {0}")]
    BadManifest(String),

    #[error("model metadata mismatch: {0}")]
    MetaMismatch(String),

    #[error("not precomputed: {0}")]
    NotPrecomputed(String),

    #[error("oracle protocol error: {0}")]
    Protocol(String),
}

impl Error {
    /// True for failures originating on the model side of the oracle boundary.
    pub fn is_oracle_error(&self) -> bool {
        matches!(
            self,
            Error::OracleFailure { .. }
                | Error::Unreachable(_)
                | Error::BadManifest(_)
                | Error::MetaMismatch(_)
                | Error::NotPrecomputed(_)
                | Error::Protocol(_)
        )
    }

    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::OracleFailure { .. } => e,
            e => Error::OracleFailure {
                step,
                source: Box::new(e),
            },
        }
    }
}
