use serde::{Deserialize, Serialize};

use crate::error::{GlbError, Result};

/// Smallest admissible ridge parameter; keeps every Cholesky factorization well posed.
pub const MIN_LAMBDA: f64 = 1e-8;

/// Scalar hyperparameters shared by the estimator, the projection and the policies.
///
/// `gamma = 1` is admitted and means "no discounting" (the stationary baselines).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub d: usize,
    /// Radius `S` of the admissible parameter ball.
    pub s_bound: f64,
    /// Bound `L` on arm norms.
    pub l_bound: f64,
    /// Rewards live in `[0, 2 sigma]`.
    pub sigma: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub horizon: usize,
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GlbError::InvalidConfig(msg));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if !(self.s_bound > 0.0) || !self.s_bound.is_finite() {
            return bad(format!("S must be positive, got {}", self.s_bound));
        }
        if !(self.l_bound > 0.0) || !self.l_bound.is_finite() {
            return bad(format!("L must be positive, got {}", self.l_bound));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(self.lambda >= MIN_LAMBDA) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= {MIN_LAMBDA}, got {}", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        Ok(())
    }

    /// Upper end of the reward range.
    pub fn reward_max(&self) -> f64 {
        2.0 * self.sigma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }
}

impl Default for ProblemConfig {
    /// The two-dimensional logistic setting: `S = L = 1`, `lambda = 1`, Bernoulli rewards.
    fn default() -> Self {
        Self {
            d: 2,
            s_bound: 1.0,
            l_bound: 1.0,
            sigma: 0.5,
            lambda: 1.0,
            gamma: 0.99,
            delta: 0.1,
            horizon: 3000,
        }
    }
}
