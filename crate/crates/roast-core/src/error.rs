//! Error surface shared by the whole crate.

use alloc::string::String;
use core::fmt;

/// Errors produced by tensor ops, models, training and evaluation.
///
/// Non-finite values are never propagated silently: any op whose output
/// contains a NaN or infinity reports `NonFinite` instead.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Input shapes do not satisfy the op's shape rule.
    ShapeMismatch { op: &'static str, detail: String },
    /// An op produced (or was handed) a NaN or infinite value.
    NonFinite { op: &'static str },
    /// A class label is >= the number of classes.
    LabelOutOfRange { label: usize, classes: usize },
    /// A token id is >= the vocabulary size.
    TokenOutOfRange { token: usize, vocab: usize },
    /// Two per-scalar buffers disagree in length.
    LengthMismatch { op: &'static str, left: usize, right: usize },
    /// An operation that needs at least one element got none.
    EmptyInput { op: &'static str },
    /// A configuration or argument value is out of its documented domain.
    InvalidArgument { detail: String },
    /// The training loss stopped being finite.
    Diverged { iteration: usize },
}

pub type CoreResult<T> = Result<T, CoreError>;

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            CoreError::NonFinite { op } => write!(f, "non-finite value in {op}"),
            CoreError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            CoreError::TokenOutOfRange { token, vocab } => {
                write!(f, "token id {token} out of range for vocabulary of {vocab}")
            }
            CoreError::LengthMismatch { op, left, right } => {
                write!(f, "length mismatch in {op}: {left} vs {right}")
            }
            CoreError::EmptyInput { op } => write!(f, "{op} requires a non-empty input"),
            CoreError::InvalidArgument { detail } => write!(f, "invalid argument: {detail}"),
            CoreError::Diverged { iteration } => {
                write!(f, "training loss became non-finite at iteration {iteration}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}
