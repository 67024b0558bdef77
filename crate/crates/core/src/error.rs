use thiserror::Error;

/// Errors raised by the estimator, simulators and I/O helpers.
#[derive(Debug, Error)]
pub enum MpdError {
    #[error("density is not integrable: rho = {rho} must exceed dim = {dim}")]
    NonIntegrableDensity { rho: f64, dim: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty sample")]
    EmptySample,

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("grid has {nodes} nodes, above the cap of {cap}; try step {suggested_step:?}")]
    GridTooLarge {
        nodes: u128,
        cap: u64,
        suggested_step: Vec<f64>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient draws: alpha * n_sims = {product} < 1")]
    InsufficientDraws { product: f64 },

    #[error("coordinate {value} at row {row}, column {column} lies outside [0, 1]")]
    OutsideUnitCube { row: usize, column: usize, value: f64 },

    #[error("degenerate denominator: all differences Y - X vanish")]
    DegenerateDenominator,

    #[error("unknown generator: {0}")]
    UnknownGenerator(String),

    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MpdError>;
