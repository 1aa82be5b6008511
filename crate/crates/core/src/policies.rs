//! Optimistic policies behind one interface.
//!
//! [`BvdGlmUcb`] is the drift-resilient GLM-UCB: a discounted quasi-MLE
//! projected back into the admissible ball, played optimistically with bonus
//! `2 r_mu β_t ‖x‖_{V⁻¹}`. With `γ = 1` and [`ProjectionRule::Direct`] it is
//! the stationary GLM-UCB baseline. [`LinUcb`] covers the linear baselines:
//! undiscounted ridge regression (OFUL) and its discounted variant (D-LinUCB).

use serde::{Deserialize, Serialize};

use crate::config::ProblemConfig;
use crate::design::DiscountedState;
use crate::error::{GlbError, Result};
use crate::estimator::fit_qmle;
use crate::glm::{compute_constants, LinkConstants, LinkSpec};
use crate::projection::{beta, project, project_direct, verify_certificate, ProjectionOptions, ProjectionOutcome};
use crate::Vector;

/// Smallest and largest discount factor returned by [`tune_gamma`].
pub const GAMMA_FLOOR: f64 = 0.5;
pub const GAMMA_CEIL: f64 = 1.0 - 1e-6;

pub trait Policy: Send {
    fn name(&self) -> &str;
    /// Index of the upcoming round, starting at 1.
    fn round(&self) -> usize;
    /// Optimistic arm choice; ties go to the lowest index.
    fn choose(&self, arms: &[Vector]) -> Result<usize>;
    fn observe(&mut self, arm: &Vector, reward: f64) -> Result<()>;
    /// Unconstrained estimate `θ̂`.
    fn theta_hat(&self) -> &Vector;
    /// Parameter used for scoring (`θ̃` when a projection is applied).
    fn theta_estimate(&self) -> &Vector;
    /// Multiplier of the exploration width at the upcoming round.
    fn bonus_scale(&self) -> f64;
    fn audit(&self) -> Option<&ProjectionAudit> {
        None
    }
}

/// Index of the largest score, lowest index among ties.
pub fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

fn check_arms(arms: &[Vector], d: usize, l_bound: f64) -> Result<()> {
    if arms.is_empty() {
        return Err(GlbError::EmptyArmSet);
    }
    for x in arms {
        if x.len() != d {
            return Err(GlbError::DimensionMismatch {
                expected: d,
                actual: x.len(),
            });
        }
        let norm = x.norm();
        if norm > l_bound * (1.0 + 1e-12) {
            return Err(GlbError::ArmNormViolation { norm, bound: l_bound });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// Orthogonal arm sets: `1 − (B/(dT))^{2/3}`.
    Orthogonal,
    /// General arm sets: `1 − (B/(√d T))^{2/5}`.
    General,
}

/// Discount factor recommended for a variation budget `B_T`, clamped to
/// `[GAMMA_FLOOR, GAMMA_CEIL]`.
pub fn tune_gamma(budget: f64, d: usize, horizon: usize, mode: GammaMode) -> Result<f64> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(GlbError::InvalidConfig(format!(
            "variation budget must be positive, got {budget}"
        )));
    }
    if d == 0 || horizon == 0 {
        return Err(GlbError::InvalidConfig("d and T must be at least 1".into()));
    }
    let (d, t) = (d as f64, horizon as f64);
    let gamma = match mode {
        GammaMode::Orthogonal => 1.0 - (budget / (d * t)).powf(2.0 / 3.0),
        GammaMode::General => 1.0 - (budget / (d.sqrt() * t)).powf(0.4),
    };
    Ok(gamma.clamp(GAMMA_FLOOR, GAMMA_CEIL))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRule {
    /// Minimize the `V⁻²` tracking deviation over the confidence vibration.
    Generalized,
    /// Project `g(θ̂)` onto the image of the ball in the `Ṽ⁻¹` metric.
    Direct,
}

/// Counters of projection calls, with certificate checks when enabled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionAudit {
    pub calls: usize,
    pub fast_path: usize,
    pub unconverged: usize,
    pub checked: usize,
    pub infeasible: usize,
    pub uncertified: usize,
    pub max_theta_norm: f64,
}

impl ProjectionAudit {
    pub fn clean(&self) -> bool {
        self.infeasible == 0 && self.uncertified == 0
    }
}

/// Optimistic GLM policy with discounted estimation and projection.
#[derive(Debug, Clone)]
pub struct BvdGlmUcb {
    name: String,
    config: ProblemConfig,
    link: LinkSpec,
    constants: LinkConstants,
    rule: ProjectionRule,
    options: ProjectionOptions,
    state: DiscountedState,
    theta_hat: Vector,
    theta_tilde: Vector,
    beta: f64,
    last_projection: Option<ProjectionOutcome>,
    unconverged_fits: usize,
    audit: ProjectionAudit,
    verify: bool,
}

impl BvdGlmUcb {
    pub fn new(
        config: ProblemConfig,
        link: LinkSpec,
        rule: ProjectionRule,
        options: ProjectionOptions,
    ) -> Result<Self> {
        config.validate()?;
        options.validate()?;
        let constants = compute_constants(&link, config.s_bound, config.l_bound)?;
        let state = DiscountedState::new(config.d, config.lambda, config.gamma)?
            .with_bounds(config.l_bound, config.reward_max());
        let beta = beta(state.t(), &config, constants.c_mu).beta;
        let name = match rule {
            ProjectionRule::Generalized => "bvd_glm_ucb",
            ProjectionRule::Direct => "glm_ucb",
        };
        Ok(Self {
            name: name.to_string(),
            config,
            link,
            constants,
            rule,
            options,
            state,
            theta_hat: Vector::zeros(config.d),
            theta_tilde: Vector::zeros(config.d),
            beta,
            last_projection: None,
            unconverged_fits: 0,
            audit: ProjectionAudit::default(),
            verify: false,
        })
    }

    /// Check feasibility and the confidence-set certificate after every projection.
    pub fn with_verification(mut self, on: bool) -> Self {
        self.verify = on;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn link(&self) -> &LinkSpec {
        &self.link
    }

    pub fn constants(&self) -> &LinkConstants {
        &self.constants
    }

    pub fn state(&self) -> &DiscountedState {
        &self.state
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn last_projection(&self) -> Option<&ProjectionOutcome> {
        self.last_projection.as_ref()
    }

    pub fn unconverged_fits(&self) -> usize {
        self.unconverged_fits
    }

    /// Upper confidence scores `μ(⟨x, θ̃⟩) + 2 r_mu β ‖x‖_{V⁻¹}`.
    pub fn scores(&self, arms: &[Vector]) -> Result<Vec<f64>> {
        check_arms(arms, self.config.d, self.config.l_bound)?;
        let scale = self.bonus_scale();
        arms.iter()
            .map(|x| Ok(self.link.eval(x.dot(&self.theta_tilde)) + scale * self.state.mahalanobis_inv(x)?))
            .collect()
    }
}

impl Policy for BvdGlmUcb {
    fn name(&self) -> &str {
        &self.name
    }

    fn round(&self) -> usize {
        self.state.t()
    }

    fn choose(&self, arms: &[Vector]) -> Result<usize> {
        let scores = self.scores(arms)?;
        Ok(argmax_lowest(&scores).expect("non-empty arm set"))
    }

    fn observe(&mut self, arm: &Vector, reward: f64) -> Result<()> {
        self.state.update(arm, reward)?;
        let c_mu = self.constants.c_mu;
        let mut fit = fit_qmle(&self.state, &self.link, c_mu, Some(&self.theta_hat))?;
        if !fit.converged {
            let cold = fit_qmle(&self.state, &self.link, c_mu, None)?;
            if cold.grad_norm < fit.grad_norm {
                fit = cold;
            }
        }
        if !fit.converged {
            self.unconverged_fits += 1;
        }
        self.theta_hat = fit.theta_hat;
        self.beta = beta(self.state.t(), &self.config, c_mu).beta;

        let s = self.config.s_bound;
        let outcome = match self.rule {
            ProjectionRule::Generalized => project(
                &self.state,
                &self.link,
                c_mu,
                &self.theta_hat,
                self.beta,
                s,
                &self.options,
            )?,
            ProjectionRule::Direct => project_direct(&self.state, &self.link, c_mu, &self.theta_hat, s, &self.options)?,
        };
        self.audit.calls += 1;
        self.audit.max_theta_norm = self.audit.max_theta_norm.max(outcome.theta_tilde.norm());
        if outcome.fast_path {
            self.audit.fast_path += 1;
        }
        if !outcome.converged {
            self.audit.unconverged += 1;
        }
        if self.verify {
            self.audit.checked += 1;
            match self.rule {
                ProjectionRule::Generalized => {
                    let check = verify_certificate(&self.state, &self.link, c_mu, &outcome, self.beta, s)?;
                    if !check.feasible {
                        self.audit.infeasible += 1;
                    }
                    if !check.certified {
                        self.audit.uncertified += 1;
                    }
                }
                ProjectionRule::Direct => {
                    if outcome.theta_tilde.norm() > s + 1e-9 {
                        self.audit.infeasible += 1;
                    }
                }
            }
        }
        self.theta_tilde = outcome.theta_tilde.clone();
        self.last_projection = Some(outcome);
        Ok(())
    }

    fn theta_hat(&self) -> &Vector {
        &self.theta_hat
    }

    fn theta_estimate(&self) -> &Vector {
        &self.theta_tilde
    }

    fn bonus_scale(&self) -> f64 {
        2.0 * self.constants.r_mu * self.beta
    }

    fn audit(&self) -> Option<&ProjectionAudit> {
        Some(&self.audit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearWidth {
    /// `β ‖x‖_{V⁻¹}`.
    Ridge,
    /// `β ‖x‖_{V⁻¹ṼV⁻¹}`.
    Sandwich,
}

/// Linear UCB with a (possibly discounted) ridge estimate.
#[derive(Debug, Clone)]
pub struct LinUcb {
    name: String,
    config: ProblemConfig,
    width: LinearWidth,
    state: DiscountedState,
    theta_hat: Vector,
    beta: f64,
}

impl LinUcb {
    pub fn new(config: ProblemConfig, width: LinearWidth) -> Result<Self> {
        config.validate()?;
        let state = DiscountedState::new(config.d, config.lambda, config.gamma)?
            .with_bounds(config.l_bound, config.reward_max());
        let beta = beta(state.t(), &config, 1.0).beta;
        let name = match width {
            LinearWidth::Ridge => "oful",
            LinearWidth::Sandwich => "d_linucb",
        };
        Ok(Self {
            name: name.to_string(),
            config,
            width,
            state,
            theta_hat: Vector::zeros(config.d),
            beta,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn state(&self) -> &DiscountedState {
        &self.state
    }

    pub fn scores(&self, arms: &[Vector]) -> Result<Vec<f64>> {
        check_arms(arms, self.config.d, self.config.l_bound)?;
        arms.iter()
            .map(|x| {
                let w = match self.width {
                    LinearWidth::Ridge => self.state.mahalanobis_inv(x)?,
                    LinearWidth::Sandwich => self.state.sandwich_norm(x)?,
                };
                Ok(x.dot(&self.theta_hat) + self.beta * w)
            })
            .collect()
    }
}

impl Policy for LinUcb {
    fn name(&self) -> &str {
        &self.name
    }

    fn round(&self) -> usize {
        self.state.t()
    }

    fn choose(&self, arms: &[Vector]) -> Result<usize> {
        let scores = self.scores(arms)?;
        Ok(argmax_lowest(&scores).expect("non-empty arm set"))
    }

    fn observe(&mut self, arm: &Vector, reward: f64) -> Result<()> {
        self.state.update(arm, reward)?;
        self.theta_hat = self.state.solve_v(self.state.reward_moment())?;
        self.beta = beta(self.state.t(), &self.config, 1.0).beta;
        Ok(())
    }

    fn theta_hat(&self) -> &Vector {
        &self.theta_hat
    }

    fn theta_estimate(&self) -> &Vector {
        &self.theta_hat
    }

    fn bonus_scale(&self) -> f64 {
        self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    BvdGlmUcb,
    GlmUcb,
    Oful,
    #[serde(rename = "d_linucb")]
    DLinUcb,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::BvdGlmUcb,
        PolicyKind::GlmUcb,
        PolicyKind::Oful,
        PolicyKind::DLinUcb,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::BvdGlmUcb => "bvd_glm_ucb",
            PolicyKind::GlmUcb => "glm_ucb",
            PolicyKind::Oful => "oful",
            PolicyKind::DLinUcb => "d_linucb",
        }
    }

    /// Whether the policy discounts its history.
    pub fn is_discounted(&self) -> bool {
        matches!(self, PolicyKind::BvdGlmUcb | PolicyKind::DLinUcb)
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Build a policy. Discounted kinds use `config.gamma`; the stationary kinds
/// override it with 1. The linear kinds ignore `link`.
pub fn make_policy(
    kind: PolicyKind,
    config: &ProblemConfig,
    link: LinkSpec,
    options: ProjectionOptions,
    verify: bool,
) -> Result<Box<dyn Policy>> {
    Ok(match kind {
        PolicyKind::BvdGlmUcb => {
            Box::new(BvdGlmUcb::new(*config, link, ProjectionRule::Generalized, options)?.with_verification(verify))
        }
        PolicyKind::GlmUcb => Box::new(
            BvdGlmUcb::new(config.with_gamma(1.0), link, ProjectionRule::Direct, options)?.with_verification(verify),
        ),
        PolicyKind::Oful => Box::new(LinUcb::new(config.with_gamma(1.0), LinearWidth::Ridge)?),
        PolicyKind::DLinUcb => Box::new(LinUcb::new(*config, LinearWidth::Sandwich)?),
    })
}
