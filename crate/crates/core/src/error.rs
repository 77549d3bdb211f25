use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("non-finite state at t = {t}")]
    Divergence { t: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no contraction metric found: {0}")]
    Infeasible(String),

    #[error("target trajectory left the state box on all {attempts} attempts")]
    TargetBudgetExhausted { attempts: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("certificate refused: alpha_ell = {0} is not positive")]
    NonPositiveRate(f64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
