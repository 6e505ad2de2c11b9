//! Crate-wide error type.

use alloc::string::String;

/// Errors produced by the core library.
///
/// `RejectedInput` covers every precondition violation on public operations
/// (shape mismatches, invalid sizes, out-of-range arguments). `TrainingFault`
/// is raised when an objective stops being finite and names the term that
/// broke first.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input violated an operation precondition.
    RejectedInput(String),
    /// A loss term or weight update became non-finite during training.
    TrainingFault { term: &'static str, step: u64 },
    /// A checkpoint or serialized blob did not match what the loader expects.
    FormatMismatch(String),
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::RejectedInput(msg) => write!(f, "rejected input: {msg}"),
            Error::TrainingFault { term, step } => {
                write!(f, "training fault: non-finite `{term}` at step {step}")
            }
            Error::FormatMismatch(msg) => write!(f, "format mismatch: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Shorthand used throughout the crate for precondition failures.
pub(crate) fn reject<T>(msg: impl core::fmt::Display) -> crate::Result<T> {
    Err(Error::RejectedInput(alloc::format!("{msg}")))
}
