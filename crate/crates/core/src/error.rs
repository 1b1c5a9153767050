use thiserror::Error;

/// Violations of the value-type invariants (dimensions, finiteness, bounds).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("{what} must have at least one component")]
    Empty { what: &'static str },

    #[error("{what}[{index}] is not finite ({value})")]
    NonFinite {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("segment {segment}: expected length {expected}, got {actual}")]
    DimensionMismatch {
        segment: String,
        expected: usize,
        actual: usize,
    },

    #[error("segment {0} is enabled but was not supplied")]
    MissingSegment(String),

    #[error("unknown state segment {0:?}")]
    UnknownSegment(String),

    #[error("the speaker embedding segment cannot be disabled")]
    EmbeddingRequired,

    #[error("refinement component {index} = {value} lies outside [-1, 1]")]
    DeltaOutOfRange { index: usize, value: f64 },

    #[error("action scale must be positive and finite, got {0}")]
    BadScale(f64),

    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn check_finite(what: &'static str, values: &[f64]) -> Result<(), DomainError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(DomainError::NonFinite {
            what,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}
