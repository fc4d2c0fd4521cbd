use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("layer index {layer} out of range for a model with {layers} layers")]
    LayerIndex { layer: usize, layers: usize },

    #[error("exact trace refused: layer has {params} parameters, oracle limit is {limit}")]
    OracleGuard { params: usize, limit: usize },

    #[error("batch norm on layer {layer} is in training mode (running statistics not populated)")]
    BatchNormTraining { layer: usize },

    #[error("overflow risk in layer {layer}: needs {needed} accumulator bits, have {available}")]
    Overflow { layer: usize, needed: u32, available: u32 },

    #[error("invalid integer model: {0}")]
    InvalidIntegerModel(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("graph validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("unsupported operator '{op}' at node '{node}'")]
    UnsupportedOperator { op: String, node: String },

    #[error("document parse error at line {line}, column {column}: {msg}")]
    Document { line: usize, column: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
