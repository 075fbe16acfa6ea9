use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for ensemble of {n_states} states")]
    IndexOutOfRange { index: usize, n_states: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unphysical moments: var_x * var_p = {product:.3e} < 1/4")]
    Physicality { product: f64 },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("Fock truncation too coarse: output trace {trace:.3e}")]
    Truncation { trace: f64 },

    #[error("covariance matrix is not bona fide (min eigenvalue {min_eigenvalue:.3e})")]
    NonPhysicalCovariance { min_eigenvalue: f64 },

    #[error("solver stalled after {iterations} iterations (gap {gap:.3e}, infeasibility {infeasibility:.3e})")]
    SolverStall {
        iterations: usize,
        gap: f64,
        infeasibility: f64,
    },

    #[error("upper bracket n̄ = {upper} is still entangled")]
    Bracket { upper: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
