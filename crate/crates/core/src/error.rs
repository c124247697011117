use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("map is not stable (spectral radius {0} >= 1)")]
    UnstableMap(f64),

    #[error("ill-conditioned matrix (condition number {0:e})")]
    IllConditioned(f64),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("partition/allocation is infeasible: {0}")]
    InfeasiblePartition(String),

    #[error("encoder construction failed: {0}")]
    ConstructionFailed(String),

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("system is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("no feasible point found: {0}")]
    Infeasible(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}
