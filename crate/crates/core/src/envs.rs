//! Drifting environments.
//!
//! An [`Environment`] combines a [`DriftSchedule`] for the hidden parameter
//! with an arm generator and a reward model. Its random draws come from two
//! dedicated streams (arms and noise), and each round consumes the same number
//! of draws whatever the policy does, so policies run on the same seed face
//! identical arm sets and identical noise.
//!
//! Policies only ever see the arm vectors of a [`Round`]; the hidden parameter
//! and the noise stay inside this module and the harness.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GlbError, Result};
use crate::glm::{LinkKind, LinkSpec};
use crate::rng::{stream_rng, STREAM_ARMS, STREAM_NOISE};
use crate::Vector;

/// Half-width of the bounded noise added to identity-link rewards.
pub const IDENTITY_NOISE_HALF_WIDTH: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreDrift,
    Drift,
    PostDrift,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftSchedule {
    /// Two-dimensional parameter of fixed norm whose angle is held at `start_angle`
    /// up to `T/3`, interpolated linearly to `end_angle` at `2T/3`, then held.
    Rotating {
        horizon: usize,
        start_angle: f64,
        end_angle: f64,
        radius: f64,
    },
    /// `thetas[k]` is in force for `switch_times[k-1] <= t < switch_times[k]`.
    PiecewiseConstant {
        horizon: usize,
        thetas: Vec<Vector>,
        switch_times: Vec<usize>,
    },
    Stationary {
        horizon: usize,
        theta: Vector,
    },
}

impl DriftSchedule {
    /// Rotation from `(0, 1)` to `(1, 0)` on the unit circle.
    pub fn rotating(horizon: usize) -> Self {
        DriftSchedule::Rotating {
            horizon,
            start_angle: PI / 2.0,
            end_angle: 0.0,
            radius: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlbError::InvalidConfig(m));
        if self.horizon() == 0 {
            return bad("schedule horizon must be at least 1".into());
        }
        match self {
            DriftSchedule::Rotating {
                radius,
                start_angle,
                end_angle,
                ..
            } => {
                if !(*radius > 0.0) || !start_angle.is_finite() || !end_angle.is_finite() {
                    return bad("rotating schedule needs a positive radius and finite angles".into());
                }
            }
            DriftSchedule::PiecewiseConstant {
                thetas, switch_times, ..
            } => {
                if thetas.is_empty() || switch_times.len() + 1 != thetas.len() {
                    return bad("piecewise schedule needs one more theta than switch times".into());
                }
                if switch_times.windows(2).any(|w| w[0] >= w[1]) || switch_times.first() == Some(&0) {
                    return bad("switch times must be positive and strictly increasing".into());
                }
                let d = thetas[0].len();
                if d == 0 || thetas.iter().any(|t| t.len() != d) {
                    return bad("all piecewise thetas must share one positive dimension".into());
                }
            }
            DriftSchedule::Stationary { theta, .. } => {
                if theta.is_empty() {
                    return bad("stationary theta must be non-empty".into());
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        match self {
            DriftSchedule::Rotating { horizon, .. }
            | DriftSchedule::PiecewiseConstant { horizon, .. }
            | DriftSchedule::Stationary { horizon, .. } => *horizon,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DriftSchedule::Rotating { .. } => 2,
            DriftSchedule::PiecewiseConstant { thetas, .. } => thetas[0].len(),
            DriftSchedule::Stationary { theta, .. } => theta.len(),
        }
    }

    /// Largest `‖θ*_t‖` over the schedule.
    pub fn max_norm(&self) -> f64 {
        match self {
            DriftSchedule::Rotating { radius, .. } => *radius,
            DriftSchedule::PiecewiseConstant { thetas, .. } => thetas.iter().map(|t| t.norm()).fold(0.0, f64::max),
            DriftSchedule::Stationary { theta, .. } => theta.norm(),
        }
    }

    fn check_round(&self, t: usize) -> Result<()> {
        let horizon = self.horizon();
        if t == 0 || t > horizon {
            return Err(GlbError::RoundOutOfRange { t, horizon });
        }
        Ok(())
    }

    /// Hidden parameter in force at round `t` (1-based).
    pub fn theta_star(&self, t: usize) -> Result<Vector> {
        self.check_round(t)?;
        Ok(match self {
            DriftSchedule::Rotating {
                horizon,
                start_angle,
                end_angle,
                radius,
            } => {
                let third = *horizon as f64 / 3.0;
                let tf = t as f64;
                let phi = if tf <= third {
                    *start_angle
                } else if tf <= 2.0 * third {
                    start_angle + (end_angle - start_angle) * (tf - third) / third
                } else {
                    *end_angle
                };
                Vector::from_vec(vec![radius * phi.cos(), radius * phi.sin()])
            }
            DriftSchedule::PiecewiseConstant {
                thetas, switch_times, ..
            } => {
                let k = switch_times.iter().take_while(|&&s| s <= t).count();
                thetas[k].clone()
            }
            DriftSchedule::Stationary { theta, .. } => theta.clone(),
        })
    }

    pub fn phase(&self, t: usize) -> Phase {
        match self {
            DriftSchedule::Rotating { horizon, .. } => {
                let third = *horizon as f64 / 3.0;
                let tf = t as f64;
                if tf <= third {
                    Phase::PreDrift
                } else if tf <= 2.0 * third {
                    Phase::Drift
                } else {
                    Phase::PostDrift
                }
            }
            DriftSchedule::PiecewiseConstant { switch_times, .. } => {
                match (switch_times.first(), switch_times.last()) {
                    (Some(&first), _) if t < first => Phase::PreDrift,
                    (_, Some(&last)) if t >= last => Phase::PostDrift,
                    (None, None) => Phase::PreDrift,
                    _ => Phase::Drift,
                }
            }
            DriftSchedule::Stationary { .. } => Phase::PreDrift,
        }
    }
}

/// `B_T = Σ_{t=1}^{T-1} ‖θ*_{t+1} − θ*_t‖`.
pub fn variation_budget(schedule: &DriftSchedule) -> f64 {
    let horizon = schedule.horizon();
    let mut prev = match schedule.theta_star(1) {
        Ok(v) => v,
        Err(_) => return 0.0,
    };
    let mut total = 0.0;
    for t in 2..=horizon {
        let cur = schedule.theta_star(t).expect("t within horizon");
        total += (&cur - &prev).norm();
        prev = cur;
    }
    total
}

/// Budget of the unit-circle quarter rotation over `T/3` steps: `(2T/3) sin(3π/(4T))`.
pub fn rotating_budget_closed_form(horizon: usize) -> f64 {
    let t = horizon as f64;
    2.0 * t / 3.0 * (3.0 * PI / (4.0 * t)).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmMode {
    /// `K` i.i.d. arms uniform on the sphere of radius `L`.
    RandomSphere,
    /// One arm `α e_i` per basis vector with `α ~ U(L/2, L)`.
    Orthogonal,
}

/// One round as produced by the environment.
#[derive(Debug, Clone)]
pub struct Round {
    pub t: usize,
    pub arms: Vec<Vector>,
    theta_star: Vector,
    noise: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Environment {
    schedule: DriftSchedule,
    arm_mode: ArmMode,
    k: usize,
    l_bound: f64,
    link: LinkSpec,
    arm_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    t: usize,
}

impl Environment {
    pub fn new(
        schedule: DriftSchedule,
        arm_mode: ArmMode,
        k: usize,
        l_bound: f64,
        link: LinkSpec,
        seed: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        if arm_mode == ArmMode::RandomSphere && k == 0 {
            return Err(GlbError::InvalidConfig("K must be at least 1".into()));
        }
        if !(l_bound > 0.0) {
            return Err(GlbError::InvalidConfig(format!("L must be positive, got {l_bound}")));
        }
        Ok(Self {
            schedule,
            arm_mode,
            k,
            l_bound,
            link,
            arm_rng: stream_rng(seed, STREAM_ARMS),
            noise_rng: stream_rng(seed, STREAM_NOISE),
            t: 0,
        })
    }

    pub fn schedule(&self) -> &DriftSchedule {
        &self.schedule
    }

    pub fn dim(&self) -> usize {
        self.schedule.dim()
    }

    pub fn horizon(&self) -> usize {
        self.schedule.horizon()
    }

    pub fn link(&self) -> &LinkSpec {
        &self.link
    }

    /// Draw the next round's arm set. Fails past the horizon.
    pub fn next_round(&mut self) -> Result<Round> {
        let t = self.t + 1;
        let theta_star = self.schedule.theta_star(t)?;
        self.t = t;
        let arms = self.draw_arms();
        let noise = [self.noise_rng.random::<f64>(), self.noise_rng.random::<f64>()];
        Ok(Round {
            t,
            arms,
            theta_star,
            noise,
        })
    }

    pub fn draw_arms(&mut self) -> Vec<Vector> {
        let d = self.dim();
        let l = self.l_bound;
        match self.arm_mode {
            ArmMode::RandomSphere => (0..self.k)
                .map(|_| {
                    if d == 2 {
                        let a = self.arm_rng.random_range(0.0..2.0 * PI);
                        Vector::from_vec(vec![l * a.cos(), l * a.sin()])
                    } else {
                        loop {
                            let g = Vector::from_fn(d, |_, _| self.arm_rng.sample::<f64, _>(StandardNormal));
                            let n = g.norm();
                            if n > 1e-12 {
                                break g * (l / n);
                            }
                        }
                    }
                })
                .collect(),
            ArmMode::Orthogonal => (0..d)
                .map(|i| {
                    let alpha = self.arm_rng.random_range(0.5 * l..=l);
                    let mut x = Vector::zeros(d);
                    x[i] = alpha;
                    x
                })
                .collect(),
        }
    }

    /// Expected reward of `arm` under the round's hidden parameter.
    pub fn mean_reward(&self, round: &Round, arm: &Vector) -> f64 {
        let z = arm.dot(&round.theta_star);
        match self.link.kind {
            LinkKind::Logistic => self.link.eval(z),
            LinkKind::Identity => z.clamp(0.0, 1.0),
        }
    }

    /// Realized reward of arm `idx`, using the round's pre-drawn noise.
    pub fn sample_reward(&self, round: &Round, idx: usize) -> f64 {
        let m = self.mean_reward(round, &round.arms[idx]);
        match self.link.kind {
            LinkKind::Logistic => {
                if round.noise[0] < m {
                    1.0
                } else {
                    0.0
                }
            }
            LinkKind::Identity => {
                let w = IDENTITY_NOISE_HALF_WIDTH.min(m).min(1.0 - m);
                (m + w * (2.0 * round.noise[1] - 1.0)).clamp(0.0, 1.0)
            }
        }
    }

    /// Pseudo-regret of playing arm `idx` against the round's best arm.
    pub fn instantaneous_regret(&self, round: &Round, idx: usize) -> f64 {
        let best = round
            .arms
            .iter()
            .map(|x| self.mean_reward(round, x))
            .fold(f64::NEG_INFINITY, f64::max);
        (best - self.mean_reward(round, &round.arms[idx])).max(0.0)
    }

    /// Hidden parameter of a round; for oracle diagnostics only.
    pub fn round_theta_star<'r>(&self, round: &'r Round) -> &'r Vector {
        &round.theta_star
    }
}
