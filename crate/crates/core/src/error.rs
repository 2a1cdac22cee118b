//! Error type shared across the crate.
//!
//! Every fallible public operation returns [`Result`]. Variants are grouped by
//! failure class so callers (notably the command line frontend) can map them
//! onto coarse exit codes without string matching.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expectation) disagree on shape.
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        /// Operation that rejected its operands.
        op: &'static str,
        /// Human-readable description of the acceptable shape(s).
        expected: String,
        /// The shape(s) actually supplied.
        got: String,
    },

    /// A configuration value is out of its documented domain.
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig {
        /// Dotted path of the offending field, e.g. `model.groups`.
        field: String,
        /// Why the value was rejected.
        reason: String,
    },

    /// An API precondition unrelated to shapes or configuration was violated.
    #[error("contract violation in {op}: {reason}")]
    Contract { op: &'static str, reason: String },

    /// A data file could not be parsed. `row` is 1-based and counts the
    /// header, so it matches what a text editor displays.
    #[error("load error at {path}:{row}: {reason}")]
    Load {
        path: String,
        row: usize,
        reason: String,
    },

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged at optimizer step {step}: loss is not finite")]
    Diverged { step: u64 },

    /// A checkpoint file is malformed or incompatible with the caller.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for shape mismatches.
    pub fn shape(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            got: got.into(),
        }
    }

    /// Convenience constructor for configuration errors.
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Convenience constructor for contract violations.
    pub fn contract(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Contract {
            op,
            reason: reason.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
