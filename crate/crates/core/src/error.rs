//! Error type shared by all modules.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor constructors, operators, and the harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand dimensions do not satisfy an operation's contract.
    ShapeMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// A scalar argument lies outside the mathematical domain of the
    /// operation (e.g. a probability outside (0, 1)).
    Domain { op: &'static str, value: f64 },
    /// The input is too small or too degenerate for the statistic to exist
    /// (e.g. a standard deviation of fewer than two samples).
    DegenerateInput { op: &'static str, len: usize },
    /// A parameter violates its documented range or consistency rule.
    Parameter { op: &'static str, message: String },
    /// An operation that requires at least one element received none.
    EmptyInput(&'static str),
}

impl Error {
    pub(crate) fn parameter(op: &'static str, message: impl Into<String>) -> Self {
        Error::Parameter {
            op,
            message: message.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, expected, got } => {
                write!(
                    f,
                    "{op}: dimension mismatch, expected {expected}, got {got}"
                )
            }
            Error::Domain { op, value } => {
                write!(f, "{op}: argument {value} outside the valid domain")
            }
            Error::DegenerateInput { op, len } => {
                write!(
                    f,
                    "{op}: input of length {len} is degenerate for this operation"
                )
            }
            Error::Parameter { op, message } => write!(f, "{op}: {message}"),
            Error::EmptyInput(op) => write!(f, "{op}: input must not be empty"),
        }
    }
}

impl std::error::Error for Error {}
