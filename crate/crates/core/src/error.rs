use alloc::string::String;

use crate::autodiff::Shape;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("{op}: value {value} is outside the function's domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: vector norm is below the 1e-12 floor")]
    DegenerateVector { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0}")]
    NotScalar(Shape),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("class {class} has {count} sample(s); stratified split needs at least 2")]
    Stratification { class: usize, count: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
