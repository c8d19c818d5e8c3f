use thiserror::Error;

pub type Result<T> = std::result::Result<T, EmvError>;

#[derive(Debug, Error)]
pub enum EmvError {
    /// Volatility matrix singular or ill-conditioned, or zero market price of risk.
    #[error("degenerate market: {0}")]
    DegenerateMarket(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("time {t} outside [0, {horizon}]")]
    Domain { t: f64, horizon: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// Second derivative of a value function is not strictly positive.
    #[error("convexity violated at t={t}, x={x}: v_xx={vxx}")]
    Convexity { t: f64, x: f64, vxx: f64 },

    #[error("simulation failed at step {step}: {reason}")]
    Simulation { step: usize, reason: String },

    #[error("wealth diverged in episode {episode} at step {step}: wealth {wealth} exceeds the bound {bound} in absolute value")]
    Divergence {
        episode: u64,
        step: usize,
        wealth: f64,
        bound: f64,
    },

    #[error("line {line}: {reason}")]
    Ingestion { line: u64, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EmvError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EmvError::InvalidInput(msg.into())
    }
}
