//! Crate-wide error type.

use alloc::string::String;

/// Errors produced by tensor ops, the tape, parsers and training loops.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor shapes are inconsistent with the operation's contract.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An argument violates a precondition (bad group count, T <= 0, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),
    /// Tape misuse, e.g. calling backward twice without a reset.
    #[error("tape: {0}")]
    Tape(String),
    /// Genotype text could not be parsed or failed validation.
    #[error("genotype: {0}")]
    Genotype(String),
    /// A dataset byte stream ended mid-record.
    #[error("truncated record at byte offset {offset}: {detail}")]
    Record {
        /// Offset of the record that could not be completed.
        offset: usize,
        /// What was being read.
        detail: String,
    },
    /// Training produced a non-finite loss.
    #[error("search diverged (non-finite loss) at stage {stage}, epoch {epoch}")]
    Diverged {
        /// Stage index within the schedule.
        stage: usize,
        /// Epoch within the stage.
        epoch: usize,
    },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
