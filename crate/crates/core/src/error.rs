use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Every weight underflowed to zero; the ensemble carries no information.
    #[error("weight collapse: all log-weights are -inf")]
    WeightCollapse,

    #[error("invalid potential value {value} at particle {index}")]
    InvalidPotential { index: usize, value: f64 },

    #[error("marginal mismatch: row total {rows} vs column total {cols}")]
    MarginalMismatch { rows: f64, cols: f64 },

    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    #[error("no proposals recorded since the last adaptation")]
    NoProposals,

    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("transport certificate violated: {0}")]
    Certificate(String),

    /// A run stopped early; `completed` temperatures were finished.
    #[error("run aborted at tau = {tau} after {completed} temperatures: {source}")]
    Aborted {
        tau: f64,
        completed: usize,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
