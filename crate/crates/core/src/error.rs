//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors produced by validation and numeric preconditions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A configuration value violates an invariant.
    InvalidConfig(String),
    /// An input value or structure violates a precondition.
    InvalidInput(String),
    /// Two tensors or sequences that must agree in shape do not.
    ShapeMismatch(String),
    /// The requested quantity has no defined value for this input.
    Undefined(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Undefined(msg) => write!(f, "undefined: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
