use thiserror::Error;

/// Errors produced by the coalescence toolkit.
#[derive(Debug, Error)]
pub enum CoagError {
    #[error("fields live on different grids ({left} vs {right})")]
    GridMismatch { left: String, right: String },

    #[error("field order mismatch: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },

    #[error("tensor order {order} exceeds the configured limit {limit}")]
    TensorOrderExceeded { order: usize, limit: usize },

    #[error("tensor with {entries} entries exceeds the budget of {budget}")]
    TensorBudget { entries: u128, budget: u128 },

    #[error("time step {dt} violates stability bound: dt*n = {product} > {bound}")]
    Stability { dt: f64, product: f64, bound: f64 },

    #[error("invalid initial-mass sampler: {0}")]
    InvalidSampler(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("resource guard: {0}")]
    Budget(String),

    #[error("summary has no order-{0} mass histogram")]
    MissingOrder(usize),

    #[error("series tail bound {bound:e} exceeds tolerance {tolerance:e}")]
    TailBound { bound: f64, tolerance: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CoagError {
    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            CoagError::GridMismatch { .. } => "grid_mismatch",
            CoagError::OrderMismatch { .. } => "order_mismatch",
            CoagError::TensorOrderExceeded { .. } => "tensor_order_exceeded",
            CoagError::TensorBudget { .. } => "tensor_budget",
            CoagError::Stability { .. } => "stability",
            CoagError::InvalidSampler(_) => "invalid_sampler",
            CoagError::InvalidConfig(_) => "invalid_config",
            CoagError::Budget(_) => "budget",
            CoagError::MissingOrder(_) => "missing_order",
            CoagError::TailBound { .. } => "tail_bound",
            CoagError::Parse(_) => "parse",
            CoagError::Io(_) => "io",
            CoagError::Json(_) => "json",
            CoagError::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = CoagError> = std::result::Result<T, E>;
