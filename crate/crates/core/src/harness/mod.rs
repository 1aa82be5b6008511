//! Experiment configuration, orchestration and persistence.
//!
//! A run is one (seed, policy) pair. Every policy of a seed replays the same
//! environment streams, so arm sets and reward noise are shared across the
//! compared policies. Runs execute on a bounded worker pool (size taken from
//! `NONSTAT_GLB_THREADS` when set) and results are written in configuration
//! order whatever the completion order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bob::{run_bob, BlockLog, BobOptions};
use crate::config::ProblemConfig;
use crate::envs::{variation_budget, ArmMode, DriftSchedule, Environment};
use crate::error::{GlbError, Result};
use crate::glm::{make_link, LinkKind};
use crate::policies::{make_policy, tune_gamma, GammaMode, Policy, PolicyKind, ProjectionAudit, GAMMA_CEIL};
use crate::projection::ProjectionOptions;
use crate::Vector;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "seed,t,algo,arm,reward,regret,cum_regret,theta_hat_norm,outside_theta";
pub const THREADS_ENV: &str = "NONSTAT_GLB_THREADS";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BLOCKS_FILE: &str = "blocks.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub seed: u64,
    pub t: usize,
    pub algo: String,
    pub arm: usize,
    pub reward: f64,
    pub regret: f64,
    pub cum_regret: f64,
    pub theta_hat_norm: f64,
    pub outside_theta: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default = "default_link")]
    pub link: LinkKind,
    #[serde(default = "one")]
    pub s_bound: f64,
    #[serde(default = "one")]
    pub l_bound: f64,
    #[serde(default = "half")]
    pub sigma: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_link() -> LinkKind {
    LinkKind::Logistic
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    0.1
}
fn default_k() -> usize {
    10
}
fn default_d() -> usize {
    2
}
fn default_arm_mode() -> ArmMode {
    ArmMode::RandomSphere
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            link: default_link(),
            s_bound: 1.0,
            l_bound: 1.0,
            sigma: 0.5,
            lambda: 1.0,
            delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Rotating,
    PiecewiseConstant,
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_k", rename = "K")]
    pub k: usize,
    #[serde(default = "default_arm_mode")]
    pub arm_mode: ArmMode,
    #[serde(default)]
    pub seed_offset: u64,
    /// Stationary parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    /// Piecewise-constant parameters and switch rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_times: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Fixed discount; tuned from the variation budget when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_gamma_mode")]
    pub gamma_mode: GammaMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Verify the projection certificate after every update.
    #[serde(default)]
    pub verify: bool,
}

fn default_gamma_mode() -> GammaMode {
    GammaMode::Orthogonal
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            gamma: None,
            gamma_mode: GammaMode::Orthogonal,
            name: None,
            verify: false,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.to_string())
    }
}

/// A single item or a list of items.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<'de, T: serde::de::DeserializeOwned> Deserialize<'de> for OneOrMany<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        match serde_json::Value::deserialize(deserializer)? {
            serde_json::Value::Array(items) => items
                .into_iter()
                .map(serde_json::from_value)
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(OneOrMany::Many)
                .map_err(D::Error::custom),
            other => serde_json::from_value(other)
                .map(OneOrMany::One)
                .map_err(D::Error::custom),
        }
    }
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub problem: ProblemSection,
    pub env: EnvSection,
    pub policy: OneOrMany<PolicySpec>,
    #[serde(default)]
    pub projection: ProjectionOptions,
    #[serde(default)]
    pub bob: BobOptions,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn policies(&self) -> Vec<PolicySpec> {
        self.policy.to_vec()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlbError::InvalidConfig(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let policies = self.policies();
        if policies.is_empty() {
            return bad("at least one policy is required".into());
        }
        let mut labels: Vec<String> = policies.iter().map(|p| p.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != policies.len() {
            return bad("policy labels must be distinct".into());
        }
        for p in &policies {
            if let Some(g) = p.gamma {
                if !(g > 0.0 && g < 1.0) {
                    return bad(format!("policy gamma must lie in (0, 1), got {g}"));
                }
            }
        }
        if !(self.problem.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.problem.sigma));
        }
        if 2.0 * self.problem.sigma < 1.0 {
            return bad(format!(
                "rewards lie in [0, 1], so sigma must be at least 0.5 (got {})",
                self.problem.sigma
            ));
        }
        self.projection.validate()?;
        let schedule = self.schedule()?;
        if schedule.max_norm() > self.problem.s_bound * (1.0 + 1e-12) {
            return bad(format!(
                "environment parameter norm {} exceeds S = {}",
                schedule.max_norm(),
                self.problem.s_bound
            ));
        }
        self.base_problem()?.validate()
    }

    pub fn schedule(&self) -> Result<DriftSchedule> {
        let e = &self.env;
        let horizon = self.horizon;
        let schedule = match e.kind {
            EnvKind::Rotating => {
                if e.d != 2 {
                    return Err(GlbError::InvalidConfig("the rotating environment needs d = 2".into()));
                }
                let r = self.problem.s_bound.min(1.0);
                match DriftSchedule::rotating(horizon) {
                    DriftSchedule::Rotating {
                        horizon,
                        start_angle,
                        end_angle,
                        ..
                    } => DriftSchedule::Rotating {
                        horizon,
                        start_angle,
                        end_angle,
                        radius: r,
                    },
                    other => other,
                }
            }
            EnvKind::Stationary => {
                let theta = e.theta.clone().unwrap_or_else(|| {
                    let mut v = vec![0.0; e.d];
                    v[0] = 1.0;
                    v
                });
                DriftSchedule::Stationary {
                    horizon,
                    theta: Vector::from_vec(theta),
                }
            }
            EnvKind::PiecewiseConstant => {
                let thetas = e
                    .thetas
                    .clone()
                    .ok_or_else(|| GlbError::InvalidConfig("piecewise_constant needs \"thetas\"".into()))?;
                DriftSchedule::PiecewiseConstant {
                    horizon,
                    thetas: thetas.into_iter().map(Vector::from_vec).collect(),
                    switch_times: e.switch_times.clone().unwrap_or_default(),
                }
            }
        };
        schedule.validate()?;
        if schedule.dim() != e.d {
            return Err(GlbError::DimensionMismatch {
                expected: e.d,
                actual: schedule.dim(),
            });
        }
        Ok(schedule)
    }

    /// Problem constants shared by every policy; `gamma` is set per policy.
    pub fn base_problem(&self) -> Result<ProblemConfig> {
        let p = &self.problem;
        Ok(ProblemConfig {
            d: self.env.d,
            s_bound: p.s_bound,
            l_bound: p.l_bound,
            sigma: p.sigma,
            lambda: p.lambda,
            gamma: 1.0,
            delta: p.delta,
            horizon: self.horizon,
        })
    }

    /// Discount used by a policy. Stationary kinds get 1; discounted kinds use
    /// the configured value, else the one tuned from the variation budget.
    pub fn resolve_gamma(&self, spec: &PolicySpec) -> Result<f64> {
        if !spec.kind.is_discounted() {
            return Ok(1.0);
        }
        if let Some(g) = spec.gamma {
            return Ok(g);
        }
        let budget = variation_budget(&self.schedule()?);
        if budget > 0.0 {
            tune_gamma(budget, self.env.d, self.horizon, spec.gamma_mode)
        } else {
            Ok(GAMMA_CEIL)
        }
    }

    pub fn environment(&self, seed: u64) -> Result<Environment> {
        Environment::new(
            self.schedule()?,
            self.env.arm_mode,
            self.env.k,
            self.problem.l_bound,
            make_link(self.problem.link),
            seed.wrapping_add(self.env.seed_offset),
        )
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration types serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Worker pool sized by `NONSTAT_GLB_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| GlbError::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| GlbError::InvalidConfig(format!("thread pool: {e}")))
}

/// Outcome of one (seed, policy) run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub algo: String,
    pub gamma: f64,
    pub records: Vec<RoundRecord>,
    pub audit: Option<ProjectionAudit>,
}

/// Play `policy` for the whole horizon of `env`.
pub fn run_policy(policy: &mut dyn Policy, env: &mut Environment, seed: u64, s_bound: f64) -> Result<Vec<RoundRecord>> {
    let horizon = env.horizon();
    let algo = policy.name().to_string();
    let mut records = Vec::with_capacity(horizon);
    let mut cum_regret = 0.0;
    for _ in 0..horizon {
        let round = env.next_round()?;
        let arm = policy.choose(&round.arms)?;
        let reward = env.sample_reward(&round, arm);
        let regret = env.instantaneous_regret(&round, arm);
        policy.observe(&round.arms[arm], reward)?;
        cum_regret += regret;
        let norm = policy.theta_hat().norm();
        records.push(RoundRecord {
            seed,
            t: round.t,
            algo: algo.clone(),
            arm,
            reward,
            regret,
            cum_regret,
            theta_hat_norm: norm,
            outside_theta: u8::from(norm > s_bound),
        });
    }
    Ok(records)
}

pub fn run_single(config: &ExperimentConfig, spec: &PolicySpec, seed: u64) -> Result<RunResult> {
    let gamma = config.resolve_gamma(spec)?;
    let problem = config.base_problem()?.with_gamma(gamma);
    let mut policy = make_policy(
        spec.kind,
        &problem,
        make_link(config.problem.link),
        config.projection,
        spec.verify,
    )?;
    let label = spec.label();
    let mut env = config.environment(seed)?;
    let mut records = run_policy(policy.as_mut(), &mut env, seed, problem.s_bound)?;
    for r in &mut records {
        r.algo.clone_from(&label);
    }
    Ok(RunResult {
        seed,
        algo: label,
        gamma,
        records,
        audit: policy.audit().cloned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub algo: String,
    pub gamma: f64,
    pub runs: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub outside_theta_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<ProjectionAudit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub variation_budget: f64,
    pub policies: Vec<PolicySummary>,
}

impl Summary {
    pub fn policy(&self, algo: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.algo == algo)
    }
}

/// Rounds `T/4, T/2, 3T/4, T` (at least 1, deduplicated).
pub fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (1..=4).map(|k| (horizon * k / 4).max(1)).collect();
    ts.dedup();
    ts
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn merge_audits(audits: &[&ProjectionAudit]) -> ProjectionAudit {
    let mut total = ProjectionAudit::default();
    for a in audits {
        total.calls += a.calls;
        total.fast_path += a.fast_path;
        total.unconverged += a.unconverged;
        total.checked += a.checked;
        total.infeasible += a.infeasible;
        total.uncertified += a.uncertified;
        total.max_theta_norm = total.max_theta_norm.max(a.max_theta_norm);
    }
    total
}

/// Aggregate runs grouped by algorithm label, in first-appearance order.
pub fn summarize(config_hash: String, horizon: usize, seeds: Vec<u64>, budget: f64, runs: &[RunResult]) -> Summary {
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.algo.as_str()) {
            labels.push(&r.algo);
        }
    }
    let policies = labels
        .into_iter()
        .map(|label| {
            let group: Vec<&RunResult> = runs.iter().filter(|r| r.algo == label).collect();
            let checkpoints = checkpoints(horizon)
                .into_iter()
                .map(|t| {
                    let values: Vec<f64> = group.iter().map(|r| r.records[t - 1].cum_regret).collect();
                    let (mean, std) = mean_std(&values);
                    Checkpoint { t, mean, std }
                })
                .collect();
            let rounds: usize = group.iter().map(|r| r.records.len()).sum();
            let outside: usize = group
                .iter()
                .flat_map(|r| &r.records)
                .map(|r| r.outside_theta as usize)
                .sum();
            let audits: Vec<&ProjectionAudit> = group.iter().filter_map(|r| r.audit.as_ref()).collect();
            PolicySummary {
                algo: label.to_string(),
                gamma: group[0].gamma,
                runs: group.len(),
                checkpoints,
                outside_theta_rate: outside as f64 / rounds.max(1) as f64,
                audit: (!audits.is_empty()).then(|| merge_audits(&audits)),
            }
        })
        .collect();
    Summary {
        config_hash,
        horizon,
        seeds,
        variation_budget: budget,
        policies,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub runs: Vec<RunResult>,
    pub summary: Summary,
}

/// Every (seed, policy) pair, seed-major.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let policies = config.policies();
    let jobs: Vec<(u64, &PolicySpec)> = config
        .seeds
        .iter()
        .flat_map(|&s| policies.iter().map(move |p| (s, p)))
        .collect();
    let pool = thread_pool()?;
    let runs: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|(seed, spec)| run_single(config, spec, *seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let budget = variation_budget(&config.schedule()?);
    let summary = summarize(config.hash(), config.horizon, config.seeds.clone(), budget, &runs);
    Ok(ExperimentOutput { runs, summary })
}

#[derive(Debug, Clone)]
pub struct BobSeedRun {
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub blocks: Vec<BlockLog>,
}

#[derive(Debug, Clone)]
pub struct BobOutput {
    pub runs: Vec<BobSeedRun>,
    pub summary: Summary,
}

/// Bandit-over-bandit over every seed of the configuration; the `policy`
/// section is not used.
pub fn run_bob_experiment(config: &ExperimentConfig) -> Result<BobOutput> {
    config.validate()?;
    let problem = config.base_problem()?;
    let link = make_link(config.problem.link);
    let pool = thread_pool()?;
    let runs: Vec<BobSeedRun> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut env = config.environment(seed)?;
                let run = run_bob(&problem, link, &config.bob, config.projection, &mut env, seed)?;
                Ok(BobSeedRun {
                    seed,
                    records: run.records,
                    blocks: run.blocks,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let as_results: Vec<RunResult> = runs
        .iter()
        .map(|r| RunResult {
            seed: r.seed,
            algo: crate::bob::BOB_ALGO_NAME.to_string(),
            gamma: f64::NAN,
            records: r.records.clone(),
            audit: None,
        })
        .collect();
    let budget = variation_budget(&config.schedule()?);
    let mut summary = summarize(config.hash(), config.horizon, config.seeds.clone(), budget, &as_results);
    for p in &mut summary.policies {
        p.gamma = 0.0;
    }
    Ok(BobOutput { runs, summary })
}

pub fn write_records<'a, W: Write>(writer: W, records: impl IntoIterator<Item = &'a RoundRecord>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(GlbError::from)).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Write `rounds.csv` and `summary.json` into `dir`.
pub fn write_experiment(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = fs::File::create(dir.join(ROUNDS_FILE))?;
    write_records(
        std::io::BufWriter::new(file),
        output.runs.iter().flat_map(|r| &r.records),
    )?;
    write_json(&dir.join(SUMMARY_FILE), &output.summary)
}

/// Write `rounds.csv`, `blocks.json` and `summary.json` into `dir`.
pub fn write_bob(dir: &Path, output: &BobOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let file = fs::File::create(dir.join(ROUNDS_FILE))?;
    write_records(
        std::io::BufWriter::new(file),
        output.runs.iter().flat_map(|r| &r.records),
    )?;
    let blocks: Vec<serde_json::Value> = output
        .runs
        .iter()
        .map(|r| serde_json::json!({ "seed": r.seed, "blocks": r.blocks }))
        .collect();
    write_json(&dir.join(BLOCKS_FILE), &blocks)?;
    write_json(&dir.join(SUMMARY_FILE), &output.summary)
}
