//! Checks that need oracle access to the hidden parameter, plus the
//! deterministic design-matrix inequalities.
//!
//! Diagnostics only read traces and configurations. Each report carries the
//! hash of the configuration it was produced from.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ProblemConfig;
use crate::design::DiscountedState;
use crate::envs::{ArmMode, DriftSchedule, Environment, Phase};
use crate::error::{GlbError, Result};
use crate::estimator::{fit_qmle, g_map, theta_bar_oracle};
use crate::glm::{compute_constants, LinkSpec};
use crate::harness::{config_hash, thread_pool, ExperimentConfig, PolicySpec, RoundRecord};
use crate::policies::{BvdGlmUcb, Policy, PolicyKind, ProjectionRule};
use crate::projection::{beta, confidence_gap};
use crate::rng::{stream_rng, STREAM_DIAG_POLICY};
use crate::Vector;

/// Relative slack on the dominance inequality.
pub const DOMINANCE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub replications: usize,
    pub horizon: usize,
    pub checkpoints: Vec<usize>,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    pub sigma: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// Multiplier applied to the confidence radius.
    pub beta_scale: f64,
    /// Feed expected rewards instead of Bernoulli draws.
    pub noiseless: bool,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            replications: 200,
            horizon: 200,
            checkpoints: vec![50, 100, 200],
            gamma: 0.99,
            delta: 0.1,
            lambda: 1.0,
            sigma: 0.5,
            k: 10,
            beta_scale: 1.0,
            noiseless: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointCoverage {
    pub t: usize,
    pub covered: usize,
    pub total: usize,
    pub coverage: f64,
    pub beta: f64,
    /// Mean of `gap / β` over replications.
    pub mean_gap_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config_hash: String,
    pub checkpoints: Vec<CheckpointCoverage>,
}

impl CoverageReport {
    pub fn min_coverage(&self) -> f64 {
        self.checkpoints
            .iter()
            .map(|c| c.coverage)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Empirical frequency of `‖g(θ̄_t) − g(θ̂_t)‖_{Ṽ⁻¹} ≤ β_t(δ)` at each checkpoint,
/// over independent replications of the rotating logistic world played by a
/// uniformly random arm choice.
pub fn check_confidence_coverage(cfg: &CoverageConfig) -> Result<CoverageReport> {
    if cfg.replications == 0 {
        return Err(GlbError::InvalidConfig("at least one replication is required".into()));
    }
    if cfg.checkpoints.is_empty() || cfg.checkpoints.iter().any(|&t| t == 0 || t > cfg.horizon) {
        return Err(GlbError::InvalidConfig(format!(
            "checkpoints must lie in 1..={}",
            cfg.horizon
        )));
    }
    if !(cfg.beta_scale > 0.0) {
        return Err(GlbError::InvalidConfig("beta_scale must be positive".into()));
    }
    let problem = ProblemConfig {
        d: 2,
        s_bound: 1.0,
        l_bound: 1.0,
        sigma: if cfg.noiseless { 0.0 } else { cfg.sigma },
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        delta: cfg.delta,
        horizon: cfg.horizon,
    };
    problem.validate()?;
    let link = LinkSpec::logistic();
    let c_mu = compute_constants(&link, problem.s_bound, problem.l_bound)?.c_mu;
    let betas: Vec<f64> = cfg
        .checkpoints
        .iter()
        .map(|&t| beta(t, &problem, c_mu).beta * cfg.beta_scale)
        .collect();

    let pool = thread_pool()?;
    let gaps: Vec<Vec<f64>> = pool.install(|| {
        (0..cfg.replications as u64)
            .into_par_iter()
            .map(|r| coverage_replication(cfg, &problem, &link, c_mu, cfg.seed.wrapping_add(r)))
            .collect::<Result<Vec<_>>>()
    })?;

    let checkpoints = cfg
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let b = betas[i];
            // the noiseless gap can equal the radius exactly
            let covered = gaps.iter().filter(|g| g[i] <= b * (1.0 + 1e-9)).count();
            let total = gaps.len();
            CheckpointCoverage {
                t,
                covered,
                total,
                coverage: covered as f64 / total as f64,
                beta: b,
                mean_gap_ratio: gaps.iter().map(|g| g[i] / b).sum::<f64>() / total as f64,
            }
        })
        .collect();
    Ok(CoverageReport {
        config_hash: config_hash(cfg),
        checkpoints,
    })
}

fn coverage_replication(
    cfg: &CoverageConfig,
    problem: &ProblemConfig,
    link: &LinkSpec,
    c_mu: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let schedule = DriftSchedule::rotating(cfg.horizon);
    let mut env = Environment::new(
        schedule.clone(),
        ArmMode::RandomSphere,
        cfg.k,
        problem.l_bound,
        *link,
        seed,
    )?;
    let mut picker = stream_rng(seed, STREAM_DIAG_POLICY);
    let mut state = DiscountedState::new(problem.d, problem.lambda, problem.gamma)?.with_bounds(problem.l_bound, 1.0);
    let mut truths = Vec::with_capacity(cfg.horizon);
    let mut gaps = vec![f64::NAN; cfg.checkpoints.len()];
    let last = *cfg.checkpoints.iter().max().expect("non-empty");
    for t in 1..=last {
        let theta_t = schedule.theta_star(t)?;
        for (slot, _) in cfg.checkpoints.iter().enumerate().filter(|(_, &c)| c == t) {
            let theta_hat = fit_qmle(&state, link, c_mu, None)?.theta_hat;
            let theta_bar = theta_bar_oracle(&state, link, c_mu, &truths, &theta_t)?;
            gaps[slot] = confidence_gap(&state, link, c_mu, &theta_bar, &theta_hat)?;
        }
        if t == last {
            break;
        }
        let round = env.next_round()?;
        let arm = picker.random_range(0..round.arms.len());
        let reward = if cfg.noiseless {
            env.mean_reward(&round, &round.arms[arm])
        } else {
            env.sample_reward(&round, arm)
        };
        state.update(&round.arms[arm], reward)?;
        truths.push(theta_t);
    }
    Ok(gaps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceSample {
    pub t: usize,
    pub event: bool,
    pub fast_path: bool,
    /// `‖g(θ_p) − g(θ̂)‖_{V⁻²}`, zero on fast-path rounds.
    pub lhs: f64,
    /// `‖g(θ̄) − g(θ*)‖_{V⁻²}`.
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominanceMode {
    /// Use the policy's projection outcome.
    Solver,
    /// Solve the one-dimensional program exactly (requires `d = 1`).
    ExactScalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub config_hash: String,
    pub mode: DominanceMode,
    pub rounds: usize,
    pub event_rounds: usize,
    pub fast_path_rounds: usize,
    /// Rounds where the event holds and the projection was active.
    pub checked: usize,
    pub satisfied: usize,
    pub rate: f64,
    pub max_ratio: f64,
}

/// Trace of a drift-resilient GLM-UCB run on `config`'s environment, with the
/// dominance quantities evaluated after every update against the parameter
/// of the following round.
pub fn dominance_trace(config: &ExperimentConfig, seed: u64, mode: DominanceMode) -> Result<Vec<DominanceSample>> {
    config.validate()?;
    if mode == DominanceMode::ExactScalar && config.env.d != 1 {
        return Err(GlbError::InvalidConfig("the exact scalar program needs d = 1".into()));
    }
    let gamma = config.resolve_gamma(&PolicySpec::new(PolicyKind::BvdGlmUcb))?;
    let problem = config.base_problem()?.with_gamma(gamma);
    let link = crate::glm::make_link(config.problem.link);
    let mut policy = BvdGlmUcb::new(problem, link, ProjectionRule::Generalized, config.projection)?;
    let schedule = config.schedule()?;
    let mut env = config.environment(seed)?;
    let c_mu = policy.constants().c_mu;
    let s = problem.s_bound;
    let mut truths = Vec::with_capacity(config.horizon);
    let mut samples = Vec::with_capacity(config.horizon);
    for t in 1..config.horizon {
        let round = env.next_round()?;
        let arm = policy.choose(&round.arms)?;
        let reward = env.sample_reward(&round, arm);
        policy.observe(&round.arms[arm], reward)?;
        truths.push(env.round_theta_star(&round).clone());

        let state = policy.state();
        let theta_next = schedule.theta_star(t + 1)?;
        let theta_hat = policy.theta_hat();
        let b = policy.beta();
        let theta_bar = theta_bar_oracle(state, &link, c_mu, &truths, &theta_next)?;
        let event = confidence_gap(state, &link, c_mu, &theta_bar, theta_hat)? <= b;
        let outcome = policy.last_projection().expect("observed at least once");
        let g_hat = g_map(state, &link, c_mu, theta_hat)?;
        let lhs = if outcome.fast_path {
            0.0
        } else {
            match mode {
                // the program's objective equals ‖g(θ_p) − g(θ̂)‖_{V⁻²} without
                // the round-off of reconstructing θ_p
                DominanceMode::Solver => outcome.objective,
                DominanceMode::ExactScalar => {
                    let half = b * state.v_tilde()[(0, 0)].sqrt();
                    let lo = g_map(state, &link, c_mu, &Vector::from_element(1, -s))?[0] - half;
                    let hi = g_map(state, &link, c_mu, &Vector::from_element(1, s))?[0] + half;
                    let z = g_hat[0];
                    let dist = if z < lo {
                        lo - z
                    } else if z > hi {
                        z - hi
                    } else {
                        0.0
                    };
                    dist / state.v()[(0, 0)]
                }
            }
        };
        let rhs = state
            .mahalanobis_inv2(&(g_map(state, &link, c_mu, &theta_bar)? - g_map(state, &link, c_mu, &theta_next)?))?;
        samples.push(DominanceSample {
            t,
            event,
            fast_path: outcome.fast_path,
            lhs,
            rhs,
        });
    }
    Ok(samples)
}

/// Fraction of event rounds with an active projection where
/// `lhs ≤ rhs (1 + 1e-6)`. Rate is 1 when no round qualifies.
pub fn check_dominance(samples: &[DominanceSample], mode: DominanceMode, config_hash: String) -> DominanceReport {
    let event_rounds = samples.iter().filter(|s| s.event).count();
    let fast_path_rounds = samples.iter().filter(|s| s.fast_path).count();
    let checked: Vec<&DominanceSample> = samples.iter().filter(|s| s.event && !s.fast_path).collect();
    let satisfied = checked
        .iter()
        .filter(|s| s.lhs <= s.rhs * (1.0 + DOMINANCE_SLACK))
        .count();
    let max_ratio = checked
        .iter()
        .map(|s| {
            if s.rhs > 0.0 {
                s.lhs / s.rhs
            } else if s.lhs > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    DominanceReport {
        config_hash,
        mode,
        rounds: samples.len(),
        event_rounds,
        fast_path_rounds,
        checked: checked.len(),
        satisfied,
        rate: if checked.is_empty() {
            1.0
        } else {
            satisfied as f64 / checked.len() as f64
        },
        max_ratio,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub rounds: usize,
    pub outside: usize,
    pub frequency: f64,
}

impl PhaseCount {
    fn add(&mut self, outside: bool) {
        self.rounds += 1;
        self.outside += usize::from(outside);
        self.frequency = self.outside as f64 / self.rounds as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutsideReport {
    pub config_hash: String,
    pub algo: String,
    pub seed: u64,
    pub s_bound: f64,
    pub pre_drift: PhaseCount,
    pub drift: PhaseCount,
    pub post_drift: PhaseCount,
}

/// Frequency of `‖θ̂_t‖ > S` per phase of the schedule, for one run's records.
pub fn check_outside_theta(
    records: &[RoundRecord],
    schedule: &DriftSchedule,
    s_bound: f64,
    config_hash: String,
) -> OutsideReport {
    let mut report = OutsideReport {
        config_hash,
        algo: records.first().map(|r| r.algo.clone()).unwrap_or_default(),
        seed: records.first().map_or(0, |r| r.seed),
        s_bound,
        pre_drift: PhaseCount::default(),
        drift: PhaseCount::default(),
        post_drift: PhaseCount::default(),
    };
    for r in records {
        let outside = r.theta_hat_norm > s_bound;
        match schedule.phase(r.t) {
            Phase::PreDrift => report.pre_drift.add(outside),
            Phase::Drift => report.drift.add(outside),
            Phase::PostDrift => report.post_drift.add(outside),
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
}

fn replay(arms: &[Vector], lambda: f64, gamma: f64) -> Result<DiscountedState> {
    let d = arms
        .first()
        .map(|x| x.len())
        .ok_or_else(|| GlbError::InvalidConfig("empty trajectory".into()))?;
    let mut state = DiscountedState::new(d, lambda, gamma)?;
    for x in arms {
        state.update(x, 0.0)?;
    }
    Ok(state)
}

/// `Σ_t ‖x_t‖²_{V_t⁻¹} ≤ 2 max(1, L²/λ) (d T log(1/γ) + log(det V_{T+1} / λ^d))`.
pub fn check_elliptical_potential(arms: &[Vector], lambda: f64, gamma: f64, l_bound: f64) -> Result<InequalityCheck> {
    let d = arms
        .first()
        .map(|x| x.len())
        .ok_or_else(|| GlbError::InvalidConfig("empty trajectory".into()))?;
    let mut state = DiscountedState::new(d, lambda, gamma)?.with_bounds(l_bound, 0.0);
    let mut lhs = 0.0;
    for x in arms {
        lhs += state.mahalanobis_inv(x)?.powi(2);
        state.update(x, 0.0)?;
    }
    let t = arms.len() as f64;
    let log_det_ratio = state.log_det_v() - d as f64 * lambda.ln();
    let rhs = 2.0 * (l_bound * l_bound / lambda).max(1.0) * (d as f64 * t * (-gamma.ln()) + log_det_ratio);
    Ok(InequalityCheck {
        holds: lhs <= rhs * (1.0 + 1e-12),
        lhs,
        rhs,
    })
}

/// `log det V_{t+1} ≤ d log(λ + L² (1 − γ^t) / (d (1 − γ)))` at the end of the trajectory.
pub fn check_determinant_trace(arms: &[Vector], lambda: f64, gamma: f64, l_bound: f64) -> Result<InequalityCheck> {
    let state = replay(arms, lambda, gamma)?;
    let d = state.d() as f64;
    let t = arms.len() as f64;
    let mass = if gamma >= 1.0 {
        t
    } else {
        let lg = gamma.ln();
        -(t * lg).exp_m1() / -lg.exp_m1()
    };
    let lhs = state.log_det_v();
    let rhs = d * (lambda + l_bound * l_bound * mass / d).ln();
    Ok(InequalityCheck {
        holds: lhs <= rhs + 1e-10 * rhs.abs().max(1.0),
        lhs,
        rhs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InequalitySuiteConfig {
    pub trajectories: usize,
    pub horizon: usize,
    pub d: usize,
    pub gammas: Vec<f64>,
    pub l_bound: f64,
    pub seed: u64,
}

impl Default for InequalitySuiteConfig {
    fn default() -> Self {
        Self {
            trajectories: 100,
            horizon: 500,
            d: 3,
            gammas: vec![0.9, 0.99, 0.999],
            l_bound: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalitySuiteReport {
    pub config_hash: String,
    pub checks: usize,
    pub potential_failures: usize,
    pub determinant_failures: usize,
    /// Largest `lhs / rhs` of the potential inequality.
    pub worst_potential_ratio: f64,
}

/// Both inequalities on random trajectories: for every `γ`, `trajectories`
/// runs of `horizon` arms with random norms in `[0, L]` and a random `λ`.
pub fn run_inequality_suite(cfg: &InequalitySuiteConfig) -> Result<InequalitySuiteReport> {
    let mut rng = stream_rng(cfg.seed, crate::rng::STREAM_DIAG_INSTANCES);
    let mut report = InequalitySuiteReport {
        config_hash: config_hash(cfg),
        checks: 0,
        potential_failures: 0,
        determinant_failures: 0,
        worst_potential_ratio: 0.0,
    };
    for &gamma in &cfg.gammas {
        for _ in 0..cfg.trajectories {
            let lambda = rng.random_range(0.05..2.0);
            let arms: Vec<Vector> = (0..cfg.horizon)
                .map(|_| {
                    let g = Vector::from_fn(cfg.d, |_, _| rng.random::<f64>() - 0.5);
                    let r = cfg.l_bound * rng.random::<f64>();
                    if g.norm() > 0.0 {
                        &g * (r / g.norm())
                    } else {
                        g
                    }
                })
                .collect();
            let p = check_elliptical_potential(&arms, lambda, gamma, cfg.l_bound)?;
            let q = check_determinant_trace(&arms, lambda, gamma, cfg.l_bound)?;
            report.checks += 1;
            report.potential_failures += usize::from(!p.holds);
            report.determinant_failures += usize::from(!q.holds);
            report.worst_potential_ratio = report.worst_potential_ratio.max(p.lhs / p.rhs);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn potential_single_term() {
        let x = Vector::from_vec(vec![0.6, 0.8]);
        let c = check_elliptical_potential(std::slice::from_ref(&x), 2.0, 0.9, 1.0).unwrap();
        assert!((c.lhs - 0.5).abs() < 1e-12);
        assert!(c.holds);
    }

    #[test]
    fn potential_near_undiscounted_limit() {
        let mut rng = stream_rng(3, 9);
        let arms: Vec<Vector> = (0..500)
            .map(|_| Vector::from_fn(2, |_, _| rng.random::<f64>() - 0.5))
            .collect();
        let c = check_elliptical_potential(&arms, 1.0, 1.0 - 1e-9, 1.0).unwrap();
        assert!(c.holds, "{c:?}");
        let c = check_determinant_trace(&arms, 1.0, 1.0 - 1e-9, 1.0).unwrap();
        assert!(c.holds, "{c:?}");
        let c = check_determinant_trace(&arms, 1.0, 1.0, 1.0).unwrap();
        assert!(c.holds, "{c:?}");
    }

    #[test]
    fn small_suite_passes() {
        let r = run_inequality_suite(&InequalitySuiteConfig {
            trajectories: 5,
            horizon: 100,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.checks, 15);
        assert_eq!(r.potential_failures + r.determinant_failures, 0);
    }

    #[test]
    fn noiseless_coverage_is_full() {
        let r = check_confidence_coverage(&CoverageConfig {
            replications: 8,
            noiseless: true,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.min_coverage(), 1.0);
    }

    #[test]
    fn inflated_radius_covers_everything() {
        let r = check_confidence_coverage(&CoverageConfig {
            replications: 8,
            beta_scale: 10.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.min_coverage(), 1.0);
        assert_eq!(
            r.checkpoints.iter().map(|c| c.t).collect::<Vec<_>>(),
            vec![50, 100, 200]
        );
    }

    #[test]
    fn coverage_rejects_bad_checkpoints() {
        let bad = CoverageConfig {
            checkpoints: vec![0],
            ..Default::default()
        };
        assert!(check_confidence_coverage(&bad).is_err());
    }

    #[test]
    fn fast_path_rounds_are_not_counted() {
        let samples = vec![
            DominanceSample {
                t: 1,
                event: true,
                fast_path: true,
                lhs: 0.0,
                rhs: 0.0,
            },
            DominanceSample {
                t: 2,
                event: true,
                fast_path: false,
                lhs: 0.5,
                rhs: 1.0,
            },
            DominanceSample {
                t: 3,
                event: false,
                fast_path: false,
                lhs: 2.0,
                rhs: 1.0,
            },
            DominanceSample {
                t: 4,
                event: true,
                fast_path: false,
                lhs: 2.0,
                rhs: 1.0,
            },
        ];
        let r = check_dominance(&samples, DominanceMode::Solver, "h".into());
        assert_eq!(
            (r.checked, r.satisfied, r.event_rounds, r.fast_path_rounds),
            (2, 1, 3, 1)
        );
        assert!((r.rate - 0.5).abs() < 1e-15);
        assert!((r.max_ratio - 2.0).abs() < 1e-15);
    }

    fn record(t: usize, norm: f64) -> RoundRecord {
        RoundRecord {
            seed: 0,
            t,
            algo: "bvd_glm_ucb".into(),
            arm: 0,
            reward: 0.0,
            regret: 0.0,
            cum_regret: 0.0,
            theta_hat_norm: norm,
            outside_theta: u8::from(norm > 1.0),
        }
    }

    #[test]
    fn outside_frequency_by_phase() {
        let schedule = DriftSchedule::rotating(9);
        let records: Vec<RoundRecord> = (1..=9)
            .map(|t| record(t, if t == 5 || t == 9 { 1.5 } else { 0.5 }))
            .collect();
        let r = check_outside_theta(&records, &schedule, 1.0, "h".into());
        assert_eq!((r.pre_drift.rounds, r.drift.rounds, r.post_drift.rounds), (3, 3, 3));
        assert_eq!((r.pre_drift.outside, r.drift.outside, r.post_drift.outside), (0, 1, 1));
        let r = check_outside_theta(&records, &schedule, 1e3, "h".into());
        assert_eq!(r.drift.frequency + r.post_drift.frequency + r.pre_drift.frequency, 0.0);
    }
}
