use thiserror::Error;

/// Errors raised by the multitime laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid on axis t{axis}: {reason}")]
    InvalidGrid { axis: usize, reason: String },

    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: String, found: String },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("non-finite value at node {node:?}")]
    NonFinite { node: Vec<usize> },

    #[error("target node {target:?} lies outside the grid")]
    TargetOutOfBounds { target: Vec<usize> },

    #[error("invalid path pattern: {0}")]
    InvalidPattern(String),

    #[error("degenerate induced metric at node {node:?} (det = {det:e})")]
    DegenerateMetric { node: Vec<usize>, det: f64 },

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("orientation error: flux volume {0} is not positive")]
    Orientation(f64),

    #[error("degenerate surface: {0}")]
    DegenerateSurface(String),

    #[error("bisection failed: {0}")]
    Bisection(String),

    #[error("coefficient matrices A{alpha} and A{beta} do not commute (commutator norm {norm:e})")]
    NotCommuting { alpha: usize, beta: usize, norm: f64 },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("expression error at column {column}: {message}")]
    Expression { column: usize, message: String },

    #[error("self-consistency violated: {0}")]
    Consistency(String),

    #[error("csv error on line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
