use thiserror::Error;

pub type Result<T, E = GlbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GlbError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("reward {reward} outside the admissible range [0, {max}]")]
    RewardOutOfRange { reward: f64, max: f64 },

    #[error("arm norm {norm} exceeds the bound L = {bound}")]
    ArmNormViolation { norm: f64, bound: f64 },

    #[error("empty arm set")]
    EmptyArmSet,

    #[error("link constants invalid: {0}")]
    InvalidLink(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("round {t} outside the schedule horizon 1..={horizon}")]
    RoundOutOfRange { t: usize, horizon: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
