//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible array shapes for an operation.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Input outside the mathematical domain of an operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// A softmax row with no unmasked entries.
    #[error("degenerate softmax row {row}: all entries masked")]
    DegenerateRow { row: usize },

    /// API contract violation (e.g. backward from a non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An operation produced a NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// Malformed text input (CSV data, edge lists, config files).
    #[error("parse error: {0}")]
    Parse(String),

    /// Structural problem in a graph or hypergraph.
    #[error("structural error: {0}")]
    Structure(String),

    /// Invalid configuration or hyperparameter.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed checkpoint payload.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Requested capability not present in the artifact (e.g. uncertainty
    /// columns from a point-forecast checkpoint).
    #[error("capability error: {0}")]
    Capability(String),

    /// Dataset/split precondition failure.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
