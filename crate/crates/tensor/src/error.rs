use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate statistics in {op}: {count} element(s) per channel, need at least 2")]
    DegenerateStats { op: &'static str, count: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("variable refers to a tape that has since been cleared")]
    StaleVar,

    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),

    #[error("unknown parameter name {0:?}")]
    UnknownName(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
