//! Generalized linear bandits under parameter drift.
//!
//! The crate implements a discounted optimistic GLM bandit whose estimate is
//! mapped back into the admissible ball by a generalized projection step, a
//! bandit-over-bandit master that learns the discount factor online, the
//! stationary and linear baselines it is compared against, drifting
//! environments, and numeric checks of the underlying concentration and
//! potential inequalities.
//!
//! Module map:
//!
//! * [`glm`] inverse link functions and the curvature constants `k_mu`, `c_mu`, `r_mu`.
//! * [`design`] discounted design matrices `V`, `Ṽ` and the weighted history.
//! * [`estimator`] discounted quasi-MLE, the map `g_t`, its inverse, the noiseless tracking estimator.
//! * [`projection`] confidence radius, confidence-set membership, projection programs.
//! * [`policies`] the drift-resilient GLM-UCB policy and its baselines.
//! * [`bob`] EXP3 master over a grid of discount factors.
//! * [`envs`] drifting environments, arm generation, rewards, variation budget.
//! * [`diagnostics`] oracle-access checks run on traces.
//! * [`harness`] configuration, seeding, orchestration, CSV/JSON output.

// negated comparisons reject NaN inputs
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bob;
pub mod config;
pub mod design;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod estimator;
pub mod glm;
pub mod harness;
pub mod policies;
pub mod projection;
pub mod rng;

pub use config::ProblemConfig;
pub use error::{GlbError, Result};

/// Column vector type used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Square matrix type used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
