//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the numeric and data layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A scalar argument fell outside its documented domain.
    Domain {
        what: &'static str,
        value: f64,
    },
    /// Vector arguments with incompatible lengths.
    DimMismatch {
        expected: usize,
        got: usize,
    },
    /// Mixture weights that are negative or do not sum to one.
    BadWeights {
        sum: f64,
    },
    EmptyMixture,
    EmptyBatch,
    EmptyDataset,
    /// A label outside `[0, num_classes)`.
    LabelOutOfRange {
        label: usize,
        num_classes: usize,
    },
    /// Bank initialization could not find samples of a class.
    MissingClass {
        class: usize,
        retries: usize,
    },
    /// Malformed input text; `line` is 1-based.
    Parse {
        line: usize,
        msg: String,
    },
    /// A computation produced a non-finite value where one is not allowed.
    NonFinite(&'static str),
    /// Anything else that violates a documented precondition.
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain { what, value } => {
                write!(f, "argument {what} = {value} outside its domain")
            }
            Error::DimMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::BadWeights { sum } => {
                write!(
                    f,
                    "mixture weights must be nonnegative and sum to 1 (sum = {sum})"
                )
            }
            Error::EmptyMixture => write!(f, "mixture has no components"),
            Error::EmptyBatch => write!(f, "batch is empty"),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            Error::MissingClass { class, retries } => {
                write!(f, "no samples of class {class} after {retries} batch draws")
            }
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
