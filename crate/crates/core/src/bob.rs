//! Bandit-over-bandit: an EXP3 master choosing the discount factor per block.
//!
//! The horizon is cut into blocks of length `H`. At the start of each block
//! the master draws a discount factor from a geometric grid, a fresh worker
//! policy runs the block with it, and the block's reward sum (rescaled by
//! `2σH`) is fed back to the master.

use std::f64::consts::E;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ProblemConfig;
use crate::envs::Environment;
use crate::error::{GlbError, Result};
use crate::glm::LinkSpec;
use crate::harness::RoundRecord;
use crate::policies::{BvdGlmUcb, Policy, ProjectionRule};
use crate::projection::ProjectionOptions;
use crate::rng::{stream_rng, STREAM_EXP3};

pub const BOB_ALGO_NAME: &str = "bob_bvd_glm_ucb";

/// Number of grid points `⌈(2/3) log₂(2 S T^{3/2})⌉ + 1`.
pub fn grid_size(s_bound: f64, horizon: usize) -> usize {
    let t = horizon as f64;
    ((2.0 / 3.0) * (2.0 * s_bound * t.powf(1.5)).log2()).ceil().max(0.0) as usize + 1
}

/// Grid gaps `μ_i = 2^{i−1} / (2 d^{2/3} T (2S)^{2/3})`, `i = 1..N`.
pub fn grid_gaps(s_bound: f64, d: usize, horizon: usize) -> Result<Vec<f64>> {
    if !(s_bound > 0.0) || horizon < 2 || d == 0 {
        return Err(GlbError::InvalidConfig(format!(
            "grid needs S > 0, d >= 1, T >= 2 (got S = {s_bound}, d = {d}, T = {horizon})"
        )));
    }
    let n = grid_size(s_bound, horizon);
    let base = 0.5 / ((d as f64).powf(2.0 / 3.0) * horizon as f64 * (2.0 * s_bound).powf(2.0 / 3.0));
    Ok((0..n).map(|i| base * 2f64.powi(i as i32)).collect())
}

/// Discount grid `γ_i = 1 − μ_i`, keeping only `μ_i < 1`.
pub fn make_grid(s_bound: f64, d: usize, horizon: usize) -> Result<Vec<f64>> {
    Ok(grid_gaps(s_bound, d, horizon)?
        .into_iter()
        .filter(|&mu| mu < 1.0)
        .map(|mu| 1.0 - mu)
        .collect())
}

/// Default block length `⌊d √T⌋`, at least 1.
pub fn default_block_length(d: usize, horizon: usize) -> usize {
    ((d as f64 * (horizon as f64).sqrt()).floor() as usize).max(1)
}

/// `min(1, √(N log N / ((e − 1) ⌈T/H⌉)))`.
pub fn exp3_alpha(n: usize, horizon: usize, block_length: usize) -> f64 {
    let blocks = horizon.div_ceil(block_length) as f64;
    let n = n as f64;
    (n * n.ln() / ((E - 1.0) * blocks)).sqrt().min(1.0)
}

/// EXP3 master. Weights are stored as logarithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp3State {
    grid: Vec<f64>,
    log_weights: Vec<f64>,
    alpha: f64,
    block_length: usize,
    block_index: usize,
    sigma: f64,
}

impl Exp3State {
    pub fn new(grid: Vec<f64>, horizon: usize, block_length: usize, sigma: f64) -> Result<Self> {
        if block_length == 0 {
            return Err(GlbError::InvalidConfig("block length must be at least 1".into()));
        }
        let alpha = exp3_alpha(grid.len(), horizon, block_length);
        Self::with_alpha(grid, alpha, block_length, sigma)
    }

    pub fn with_alpha(grid: Vec<f64>, alpha: f64, block_length: usize, sigma: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(GlbError::InvalidConfig("discount grid is empty".into()));
        }
        if let Some(g) = grid.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
            return Err(GlbError::InvalidConfig(format!("grid value {g} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(GlbError::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if block_length == 0 || !(sigma > 0.0) {
            return Err(GlbError::InvalidConfig(
                "block length and sigma must be positive".into(),
            ));
        }
        Ok(Self {
            log_weights: vec![0.0; grid.len()],
            grid,
            alpha,
            block_length,
            block_index: 0,
            sigma,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    /// Number of completed updates.
    pub fn block_index(&self) -> usize {
        self.block_index
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// `p_j = (1 − α) s_j / Σ s + α / N`.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.grid.len() as f64;
        let top = self.log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rel: Vec<f64> = self.log_weights.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = rel.iter().sum();
        rel.iter()
            .map(|r| (1.0 - self.alpha) * r / total + self.alpha / n)
            .collect()
    }

    /// Inverse-CDF draw from the current probabilities.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let probs = self.probabilities();
        let mut acc = 0.0;
        for (j, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        probs.len() - 1
    }

    /// `s_j ← s_j exp(α/(N p_j) · sum/(2σH))`; other weights unchanged.
    pub fn update(&mut self, chosen: usize, block_reward_sum: f64) -> Result<()> {
        let n = self.grid.len();
        if chosen >= n {
            return Err(GlbError::InvalidConfig(format!(
                "grid index {chosen} out of range for {n} values"
            )));
        }
        let scale = 2.0 * self.sigma * self.block_length as f64;
        if !(0.0..=scale * (1.0 + 1e-12)).contains(&block_reward_sum) {
            return Err(GlbError::RewardOutOfRange {
                reward: block_reward_sum,
                max: scale,
            });
        }
        let p = self.probabilities()[chosen];
        self.log_weights[chosen] += self.alpha / (n as f64 * p) * block_reward_sum / scale;
        self.block_index += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoLength {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockLength {
    Auto(AutoLength),
    Fixed(usize),
}

impl Default for BlockLength {
    fn default() -> Self {
        BlockLength::Auto(AutoLength::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BobOptions {
    #[serde(rename = "H")]
    pub block_length: BlockLength,
    pub grid_override: Option<Vec<f64>>,
}

/// One block of a bandit-over-bandit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockLog {
    pub block: usize,
    pub start_t: usize,
    pub rounds: usize,
    pub probabilities: Vec<f64>,
    pub chosen: usize,
    pub gamma: f64,
    pub reward_sum: f64,
    /// Worker round counter when the block's first arm was chosen.
    pub worker_first_round: usize,
}

#[derive(Debug, Clone)]
pub struct BobRun {
    pub records: Vec<RoundRecord>,
    pub blocks: Vec<BlockLog>,
    pub master: Exp3State,
}

/// Run the master over the whole horizon of `env`. `config.gamma` is ignored.
pub fn run_bob(
    config: &ProblemConfig,
    link: LinkSpec,
    options: &BobOptions,
    projection: ProjectionOptions,
    env: &mut Environment,
    seed: u64,
) -> Result<BobRun> {
    let horizon = env.horizon();
    let h = match options.block_length {
        BlockLength::Auto(_) => default_block_length(config.d, horizon),
        BlockLength::Fixed(h) => h,
    };
    if h == 0 {
        return Err(GlbError::InvalidConfig("block length must be at least 1".into()));
    }
    let grid = match &options.grid_override {
        Some(g) => g.clone(),
        None => make_grid(config.s_bound, config.d, horizon.max(2))?,
    };
    let mut master = Exp3State::new(grid, horizon, h, config.sigma)?;
    let mut rng = stream_rng(seed, STREAM_EXP3);
    let mut records = Vec::with_capacity(horizon);
    let mut blocks = Vec::new();
    let mut cum_regret = 0.0;
    let mut t = 0;
    let n_blocks = horizon.div_ceil(h);
    for block in 0..n_blocks {
        let probabilities = master.probabilities();
        let chosen = master.sample(&mut rng);
        let gamma = master.grid()[chosen];
        let mut worker = BvdGlmUcb::new(config.with_gamma(gamma), link, ProjectionRule::Generalized, projection)?;
        let worker_first_round = worker.round();
        let rounds = h.min(horizon - t);
        let mut reward_sum = 0.0;
        for _ in 0..rounds {
            let round = env.next_round()?;
            let arm = worker.choose(&round.arms)?;
            let reward = env.sample_reward(&round, arm);
            let regret = env.instantaneous_regret(&round, arm);
            worker.observe(&round.arms[arm], reward)?;
            reward_sum += reward;
            cum_regret += regret;
            t = round.t;
            let norm = worker.theta_hat().norm();
            records.push(RoundRecord {
                seed,
                t,
                algo: BOB_ALGO_NAME.to_string(),
                arm,
                reward,
                regret,
                cum_regret,
                theta_hat_norm: norm,
                outside_theta: u8::from(norm > config.s_bound),
            });
        }
        master.update(chosen, reward_sum)?;
        blocks.push(BlockLog {
            block: block + 1,
            start_t: t + 1 - rounds,
            rounds,
            probabilities,
            chosen,
            gamma,
            reward_sum,
            worker_first_round,
        });
    }
    Ok(BobRun {
        records,
        blocks,
        master,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ArmMode, DriftSchedule};

    #[test]
    fn grid_examples() {
        assert_eq!(grid_size(1.0, 2), 3);
        assert_eq!(make_grid(1.0, 1, 2).unwrap().len(), 3);
        let gaps = grid_gaps(1.0, 2, 3000).unwrap();
        let g = make_grid(1.0, 2, 3000).unwrap();
        assert_eq!(g.len(), gaps.len());
        let mu1 = 0.5 / (3000.0 * 2f64.powf(4.0 / 3.0));
        assert!((gaps[0] - mu1).abs() < 1e-18);
        assert!((mu1 - 6.61417e-5).abs() < 1e-10);
        assert!((g[0] - 0.9999339).abs() < 1e-7);
        for w in gaps.windows(2) {
            assert_eq!(w[1] / w[0], 2.0);
        }
        assert!(g.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert!(make_grid(1.0, 2, 1).is_err());
    }

    #[test]
    fn probability_examples() {
        let s = Exp3State::new(vec![0.9, 0.99, 0.999], 100, 10, 0.5).unwrap();
        assert!(s.probabilities().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));

        let mut s = Exp3State::with_alpha(vec![0.9, 0.99, 0.999], 0.1, 10, 0.5).unwrap();
        s.log_weights[0] = 2f64.ln();
        let p = s.probabilities();
        let want = [0.9 * 0.5 + 1.0 / 30.0, 0.9 * 0.25 + 1.0 / 30.0, 0.9 * 0.25 + 1.0 / 30.0];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p[0] - 0.48333).abs() < 1e-5 && (p[1] - 0.25833).abs() < 1e-5);

        let mut s = Exp3State::with_alpha(vec![0.9, 0.99], 1.0, 10, 0.5).unwrap();
        s.log_weights[1] = 5.0;
        assert!(s.probabilities().iter().all(|p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn update_examples() {
        let mut s = Exp3State::with_alpha(vec![0.9, 0.99], 0.5, 10, 0.5).unwrap();
        s.update(0, 0.0).unwrap();
        assert_eq!(s.weights(), vec![1.0, 1.0]);

        let mut s = Exp3State::with_alpha(vec![0.9, 0.99], 0.5, 10, 0.5).unwrap();
        s.update(1, 10.0).unwrap();
        assert!((s.weights()[1] - 0.5f64.exp()).abs() < 1e-12);
        assert_eq!(s.weights()[0], 1.0);
        let p = s.probabilities()[1];
        s.update(1, 10.0).unwrap();
        let second = (0.5 / (2.0 * p)).exp();
        assert!((s.weights()[1] - 0.5f64.exp() * second).abs() < 1e-12);

        assert!(s.update(0, 10.5).is_err());
        assert!(s.update(0, -0.1).is_err());
        assert!(s.update(2, 1.0).is_err());
    }

    fn rotating_env(horizon: usize, seed: u64) -> Environment {
        Environment::new(
            DriftSchedule::rotating(horizon),
            ArmMode::RandomSphere,
            10,
            1.0,
            LinkSpec::logistic(),
            seed,
        )
        .unwrap()
    }

    fn run(horizon: usize, h: usize, seed: u64) -> BobRun {
        let config = ProblemConfig {
            horizon,
            ..ProblemConfig::default()
        };
        let opts = BobOptions {
            block_length: BlockLength::Fixed(h),
            grid_override: None,
        };
        let mut env = rotating_env(horizon, seed);
        run_bob(
            &config,
            LinkSpec::logistic(),
            &opts,
            ProjectionOptions::default(),
            &mut env,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn single_block_when_horizon_fits() {
        let r = run(30, 50, 1);
        assert_eq!(r.blocks.len(), 1);
        assert_eq!(r.master.block_index(), 1);
        assert_eq!(r.records.len(), 30);
    }

    #[test]
    fn workers_restart_each_block() {
        let r = run(40, 20, 2);
        assert_eq!(r.blocks.len(), 2);
        assert!(r.blocks.iter().all(|b| b.worker_first_round == 1 && b.rounds == 20));
        assert_eq!(r.blocks[1].start_t, 21);
        let ts: Vec<usize> = r.records.iter().map(|x| x.t).collect();
        assert_eq!(ts, (1..=40).collect::<Vec<_>>());
    }

    #[test]
    fn runs_are_reproducible() {
        let a = run(60, 15, 7);
        let b = run(60, 15, 7);
        assert_eq!(a.blocks, b.blocks);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn block_length_parses_auto_or_integer() {
        let o: BobOptions = serde_json::from_str(r#"{"H": "auto"}"#).unwrap();
        assert_eq!(o.block_length, BlockLength::default());
        let o: BobOptions = serde_json::from_str(r#"{"H": 12, "grid_override": [0.9]}"#).unwrap();
        assert_eq!(o.block_length, BlockLength::Fixed(12));
        assert!(serde_json::from_str::<BobOptions>(r#"{"h": 3}"#).is_err());
        assert_eq!(default_block_length(2, 3000), 109);
    }
}
