use thiserror::Error;

/// Errors produced while building, fitting or evaluating a sparse network.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A deeper-layer weight row has zero norm, so the normalized map is undefined.
    #[error("degenerate parameter: row {row} of layer {layer} has zero norm")]
    DegenerateParameter { layer: usize, row: usize },

    #[error("non-differentiable point: {0}")]
    NonDifferentiable(String),

    /// The centered response is identically zero.
    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    #[error("optimization diverged during {stage}")]
    Divergence { stage: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("insufficient capacity: {0}")]
    Capacity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
