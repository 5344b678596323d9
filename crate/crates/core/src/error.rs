use thiserror::Error;

/// Errors raised anywhere in the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid language: {0}")]
    Language(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("problem is unbounded: {0}")]
    Unbounded(String),

    #[error("ill-posed problem: {0}")]
    BadProblem(String),

    #[error("solver failure: {0}")]
    Solver(String),

    /// Gains recovered from leaves sharing a prefix node disagree.
    #[error("prefix consistency violated at node {node}: max deviation {deviation:.3e}")]
    Consistency { node: usize, deviation: f64 },

    #[error("signal prefix not present in the controller tree: {0}")]
    UnknownSignal(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
