use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nonstat_glb::diagnostics::{
    check_confidence_coverage, check_dominance, check_outside_theta, dominance_trace, run_inequality_suite,
    CoverageConfig, DominanceMode, InequalitySuiteConfig,
};
use nonstat_glb::envs::{variation_budget, DriftSchedule};
use nonstat_glb::harness::{
    run_bob_experiment, run_experiment, write_bob, write_experiment, ExperimentConfig, OneOrMany, PolicySpec, Summary,
};
use nonstat_glb::policies::{tune_gamma, GammaMode, PolicyKind};
use nonstat_glb::{GlbError, Vector};

#[derive(Parser)]
#[command(
    name = "nonstat-glb",
    version,
    about = "Generalized linear bandits under parameter drift"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured policy on every seed and write rounds.csv + summary.json
    Run(RunArgs),
    /// Run the bandit-over-bandit master on every seed
    Bob(RunArgs),
    /// Run the diagnostics suite and write one JSON report per check
    Diag(DiagArgs),
    /// Print the variation budget of a schedule and the tuned discount factors
    Budget(BudgetArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Use seeds 0..N instead of the configured list
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct DiagArgs {
    /// Experiment whose drift-resilient policy runs feed the outside-ball check
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, default_value = "results/diag")]
    out: PathBuf,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvChoice {
    Rotating,
    Stationary,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, value_enum)]
    env: EnvChoice,
    #[arg(long = "T")]
    horizon: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
}

enum Failure {
    Usage(String),
    Run(GlbError),
}

impl From<GlbError> for Failure {
    fn from(e: GlbError) -> Self {
        Failure::Run(e)
    }
}

fn load(path: &Path, seeds: Option<u64>, horizon: Option<usize>) -> Result<ExperimentConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("config file not found: {}", path.display())));
    }
    let mut config = ExperimentConfig::load(path)?;
    if let Some(n) = seeds {
        config.seeds = (0..n).collect();
    }
    if let Some(t) = horizon {
        config.horizon = t;
    }
    config.validate()?;
    Ok(config)
}

fn print_summary(summary: &Summary) {
    println!("config {}", summary.config_hash);
    println!("B_T = {:.6}", summary.variation_budget);
    for p in &summary.policies {
        let cps: Vec<String> = p
            .checkpoints
            .iter()
            .map(|c| format!("t={}: {:.2} ± {:.2}", c.t, c.mean, c.std))
            .collect();
        println!("{:<16} {}", p.algo, cps.join("  "));
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let config = load(&args.config, args.seeds, args.horizon)?;
    let out = args.out.unwrap_or_else(|| config.output.clone());
    let output = run_experiment(&config)?;
    write_experiment(&out, &output)?;
    if !args.quiet {
        print_summary(&output.summary);
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn bob(args: RunArgs) -> Result<(), Failure> {
    let config = load(&args.config, args.seeds, args.horizon)?;
    let out = args.out.unwrap_or_else(|| config.output.clone());
    let output = run_bob_experiment(&config)?;
    write_bob(&out, &output)?;
    if !args.quiet {
        print_summary(&output.summary);
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn emit<T: Serialize>(dir: &Path, name: &str, report: &T, quiet: bool) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).map_err(GlbError::from)?;
    std::fs::write(dir.join(format!("{name}.json")), format!("{text}\n")).map_err(GlbError::from)?;
    if !quiet {
        println!("== {name}\n{text}");
    }
    Ok(())
}

fn scalar_dominance_config() -> ExperimentConfig {
    let text = r#"{"schema": 1, "seeds": [0], "horizon": 2000,
        "env": {"kind": "piecewise_constant", "d": 1, "K": 2,
                "thetas": [[0.8], [-0.6], [0.9]], "switch_times": [600, 1300]},
        "policy": {"kind": "bvd_glm_ucb"}}"#;
    serde_json::from_str(text).expect("built-in configuration parses")
}

fn orthogonal_dominance_config() -> ExperimentConfig {
    let text = r#"{"schema": 1, "seeds": [0], "horizon": 2000,
        "env": {"kind": "rotating", "arm_mode": "orthogonal"},
        "policy": {"kind": "bvd_glm_ucb"}}"#;
    serde_json::from_str(text).expect("built-in configuration parses")
}

fn diag(args: DiagArgs) -> Result<(), Failure> {
    std::fs::create_dir_all(&args.out).map_err(GlbError::from)?;
    let q = args.quiet;
    emit(
        &args.out,
        "coverage",
        &check_confidence_coverage(&CoverageConfig::default())?,
        q,
    )?;
    emit(
        &args.out,
        "inequalities",
        &run_inequality_suite(&InequalitySuiteConfig::default())?,
        q,
    )?;

    let scalar = scalar_dominance_config();
    let trace = dominance_trace(&scalar, 0, DominanceMode::ExactScalar)?;
    emit(
        &args.out,
        "dominance_scalar",
        &check_dominance(&trace, DominanceMode::ExactScalar, scalar.hash()),
        q,
    )?;
    let orth = orthogonal_dominance_config();
    let trace = dominance_trace(&orth, 0, DominanceMode::Solver)?;
    emit(
        &args.out,
        "dominance_orthogonal",
        &check_dominance(&trace, DominanceMode::Solver, orth.hash()),
        q,
    )?;

    if let Some(path) = &args.config {
        let mut config = load(path, args.seeds, args.horizon)?;
        let spec = config
            .policies()
            .into_iter()
            .find(|p| p.kind == PolicyKind::BvdGlmUcb)
            .unwrap_or_else(|| PolicySpec::new(PolicyKind::BvdGlmUcb));
        config.policy = OneOrMany::One(spec);
        let output = run_experiment(&config)?;
        let schedule = config.schedule()?;
        let reports: Vec<_> = output
            .runs
            .iter()
            .map(|r| check_outside_theta(&r.records, &schedule, config.problem.s_bound, config.hash()))
            .collect();
        emit(&args.out, "outside_theta", &reports, q)?;
    }
    Ok(())
}

fn budget(args: BudgetArgs) -> Result<(), Failure> {
    if args.horizon == 0 || args.d == 0 {
        return Err(Failure::Usage("--T and --d must be at least 1".into()));
    }
    let schedule = match args.env {
        EnvChoice::Rotating => DriftSchedule::rotating(args.horizon),
        EnvChoice::Stationary => DriftSchedule::Stationary {
            horizon: args.horizon,
            theta: Vector::from_element(args.d, 0.0),
        },
    };
    let b = variation_budget(&schedule);
    println!("B_T = {b:.6}");
    if b > 0.0 {
        println!(
            "gamma_orthogonal = {:.6}",
            tune_gamma(b, args.d, args.horizon, GammaMode::Orthogonal)?
        );
        println!(
            "gamma_general = {:.6}",
            tune_gamma(b, args.d, args.horizon, GammaMode::General)?
        );
    } else {
        println!("gamma_orthogonal = n/a (no drift)");
        println!("gamma_general = n/a (no drift)");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Bob(a) => bob(a),
        Command::Diag(a) => diag(a),
        Command::Budget(a) => budget(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
