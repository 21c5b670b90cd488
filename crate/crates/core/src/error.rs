// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout `sea-core`.
pub type Result<T> = std::result::Result<T, SeaError>;

#[derive(Debug, Error)]
pub enum SeaError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("length mismatch: header declares {expected} payload bytes, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("orthonormality violated in {context}: deviation {deviation:.3e} exceeds {tolerance:.0e}")]
    Orthonormality {
        context: String,
        deviation: f64,
        tolerance: f64,
    },

    #[error("degenerate covariance: all singular values zero")]
    DegenerateCovariance,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown layer id {0}")]
    UnknownLayer(usize),

    #[error("feature-kind mismatch: bundle fitted with {bundle}, config requests {config}")]
    FeatureMismatch { bundle: String, config: String },

    #[error("token id {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },

    #[error("sequence of length {len} exceeds context length {context}")]
    SequenceTooLong { len: usize, context: usize },

    #[error("corrupted editing state: {0}")]
    CorruptedState(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl SeaError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SeaError::DegenerateCovariance | SeaError::Numerical(_) | SeaError::CorruptedState(_)
        )
    }
}
