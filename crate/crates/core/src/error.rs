use thiserror::Error;

/// Errors produced by the chain, graph, spectral, loss, training and probe layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("transition kernel row {row} sums to {sum} (expected 1)")]
    NotStochastic { row: usize, sum: f64 },

    #[error("chain is not reversible: max detailed-balance violation {max_violation:e}")]
    Irreversible { max_violation: f64 },

    #[error("stationary distribution has non-positive mass at state {state}")]
    ZeroMass { state: usize },

    #[error("chain is reducible: state {unreachable} is not reachable from state 0")]
    Reducible { unreachable: usize },

    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NotConverged { iterations: usize, residual: f64 },

    #[error("random graph still disconnected after {attempts} attempts")]
    Disconnected { attempts: usize },

    #[error("matrix is not symmetric: max asymmetry {max_asymmetry:e}")]
    Asymmetric { max_asymmetry: f64 },

    #[error("rank deficient input: effective ranks {rank_a} and {rank_b}, need {k}")]
    RankDeficient {
        rank_a: usize,
        rank_b: usize,
        k: usize,
    },

    #[error("empty {0} list")]
    EmptyBatch(&'static str),

    #[error("target column {column} has zero variance")]
    ZeroVariance { column: usize },

    #[error(
        "training diverged at step {step} (loss {loss:e}) with learning rate {learning_rate:e}; \
         try a smaller learning rate"
    )]
    Diverged {
        step: usize,
        loss: f64,
        learning_rate: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
