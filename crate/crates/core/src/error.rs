use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular input: {0}")]
    SingularInput(String),

    #[error("eigenvalue {index} = {value:e} is not positive")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("kernel marching unstable at slice {slice}: norm {norm:e} exceeds envelope {envelope:e}")]
    Instability {
        slice: usize,
        norm: f64,
        envelope: f64,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("constraint violation at node {node}: {detail}")]
    ConstraintViolation { node: usize, detail: String },

    #[error("schedule violates the gap condition at m = {m}: (t[m+1]-t[m])*sqrt(lambda[m]) = {value:e} < gamma = {gamma:e}")]
    ScheduleGap { m: usize, value: f64, gamma: f64 },

    #[error("schedule invalid: {0}")]
    Schedule(String),

    #[error("kernel solve failed on interval {interval}: {source}")]
    IntervalKernel {
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
