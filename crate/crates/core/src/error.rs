use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("singular resolvent at omega = {0}")]
    SingularResolvent(f64),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("zeno behavior detected at t = {time}: {reason}")]
    ZenoDetected { time: f64, reason: String },

    #[error("integrator step failure at t = {time}: {reason}")]
    StepFailure { time: f64, reason: String },

    #[error("tail not settled: {0}")]
    TailNotSettled(String),

    #[error("zero-norm input")]
    ZeroInput,

    #[error("empty window")]
    EmptyWindow,

    #[error("zero region area")]
    ZeroArea,

    #[error("all {0} tasks failed")]
    AllFailed(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
