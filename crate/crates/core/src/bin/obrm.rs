use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use obrm::harness::{self, AlgorithmSpec, Grid, SweepConfig};
use obrm::instances::{
    read_instance, write_instance, instance_to_string, Example1Branch, GeneratorSpec, RandomFamily, RandomSpec,
};
use obrm::model::{validate_instance, Instance, WeightMode};
use obrm::online::{
    expected_value_exact, online_greedy, parallel_load_balance, random_online_greedy, AlgorithmKind,
    OnlineGreedyConfig, RunRecord,
};
use obrm::oracle::{offline_optimal, SearchBudget, MAX_NODES_ENV, TIME_LIMIT_ENV};
use obrm::TieBreakRule;

#[derive(Parser)]
#[command(name = "obrm", version, about = "Online budgeted repeated matching: algorithms, oracle and ratio harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Run an online algorithm and print its allocation and trace.
    Run(RunArgs),
    /// Compute the offline optimum.
    Oracle(OracleArgs),
    /// Compare an algorithm against the offline optimum.
    Ratio(RatioArgs),
    /// Sweep a random family over a parameter grid and write CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// example1, example2, example3, random_general,
    /// random_restricted(ALPHA) or random_parallel(EPS)
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    t: usize,
    #[arg(long, default_value_t = 3)]
    jobs: usize,
    #[arg(long, default_value_t = 1.0)]
    capacity: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Edge probability for the random general and restricted families.
    #[arg(long, default_value_t = 0.75)]
    density: f64,
    /// Second-step weights for example1: zz, zh, hz or hh.
    #[arg(long, default_value = "hh")]
    branch: Example1Branch,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct AlgArgs {
    #[arg(long)]
    alg: AlgorithmKind,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl AlgArgs {
    fn spec(&self, mc_trials: Option<u64>) -> AlgorithmSpec {
        match self.alg {
            AlgorithmKind::OnlineGreedy => AlgorithmSpec::OnlineGreedy { alpha: self.alpha },
            AlgorithmKind::RandomOnlineGreedy => AlgorithmSpec::RandomGreedy {
                seed: self.seed,
                mc_trials,
            },
            AlgorithmKind::ParallelLoadBalance => AlgorithmSpec::LoadBalance,
        }
    }
}

#[derive(Args)]
struct InputArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Reject unknown fields in the instance file.
    #[arg(long)]
    strict_schema: bool,
}

impl InputArgs {
    fn load(&self) -> Result<Instance> {
        read_instance(&self.input, self.strict_schema).with_context(|| format!("reading {}", self.input.display()))
    }
}

#[derive(Args)]
struct BudgetArgs {
    /// Node budget for the oracle search [env: OBRM_ORACLE_MAX_NODES]
    #[arg(long)]
    max_nodes: Option<u64>,
    /// Wall-clock budget, e.g. 30s [env: OBRM_ORACLE_TIME_LIMIT]
    #[arg(long, value_parser = humantime::parse_duration)]
    time_limit: Option<Duration>,
}

impl BudgetArgs {
    fn budget(&self) -> SearchBudget {
        let env = SearchBudget::from_env();
        let budget = SearchBudget::new(
            self.max_nodes.unwrap_or(env.max_nodes),
            self.time_limit.unwrap_or(env.time_limit),
        );
        info!(
            "oracle budget: {} nodes, {} (defaults from {MAX_NODES_ENV}, {TIME_LIMIT_ENV})",
            budget.max_nodes,
            humantime::format_duration(budget.time_limit)
        );
        budget
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    alg: AlgArgs,
    #[command(flatten)]
    input: InputArgs,
    /// onlinegreedy: reject edges heavier than alpha * C_i instead of running.
    #[arg(long)]
    strict: bool,
    /// onlinegreedy: scan ties by job before server.
    #[arg(long)]
    job_first_ties: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct RatioArgs {
    #[command(flatten)]
    alg: AlgArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Also estimate the randomized algorithm's value by simulation.
    #[arg(long)]
    mc_trials: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// random_general, random_restricted(ALPHA) or random_parallel(EPS)
    #[arg(long)]
    family: RandomFamily,
    /// e.g. "n=2,3;t=2,3,4;jobs=3;c=1"
    #[arg(long)]
    grid: Grid,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Algorithms to run; the family's defaults when omitted.
    #[arg(long, value_delimiter = ',')]
    alg: Vec<AlgorithmKind>,
    /// onlinegreedy alpha; the family's alpha when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mc_trials: Option<u64>,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(short, long)]
    output: PathBuf,
}

/// `run` output: the run record plus the randomized algorithm's shadow
/// quantities.
#[derive(Serialize)]
struct RunOutput {
    #[serde(flatten)]
    record: RunRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    shadow_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expected_value: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => gen(args),
        Command::Run(args) => run(args),
        Command::Oracle(args) => oracle(args),
        Command::Ratio(args) => ratio(args),
        Command::Sweep(args) => sweep(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn gen(args: GenArgs) -> Result<bool> {
    let spec = match args.family.as_str() {
        "example1" => GeneratorSpec::Example1 {
            capacity: args.capacity,
            epsilon: args.epsilon,
            branch: args.branch,
        },
        "example2" => GeneratorSpec::Example2 {
            n: args.n,
            epsilon: args.epsilon,
        },
        "example3" => GeneratorSpec::Example3 {
            capacity: args.capacity,
            epsilon: args.epsilon,
        },
        other => {
            let family: RandomFamily = other.parse()?;
            GeneratorSpec::Random(RandomSpec {
                capacity: args.capacity,
                edge_density: args.density,
                ..RandomSpec::new(family, args.n, args.t, args.jobs, args.seed)
            })
        }
    };
    let instance = spec.generate()?;
    match &args.output {
        Some(path) => write_instance(&instance, path).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", instance_to_string(&instance)),
    }
    Ok(true)
}

fn run(args: RunArgs) -> Result<bool> {
    let instance = args.input.load()?;
    let (run, shadow_value, expected_value, feasible_mode) = match args.alg.alg {
        AlgorithmKind::OnlineGreedy => {
            let mut config = OnlineGreedyConfig::with_alpha(args.alg.alpha);
            if args.strict {
                config = config.strict();
            }
            if args.job_first_ties {
                config.tie_break = TieBreakRule::JobThenServer;
            }
            let bounded = validate_instance(&instance, WeightMode::AlphaBounded(args.alg.alpha))?
                .violations
                .is_empty();
            if !bounded {
                warn!("instance has edges heavier than alpha * C_i; feasibility is not guaranteed");
            }
            (online_greedy(&instance, &config)?, None, None, bounded)
        }
        AlgorithmKind::RandomOnlineGreedy => {
            let cleaned = without_oversize(&instance)?;
            let (run, shadow) = random_online_greedy(&cleaned, args.alg.seed)?;
            let w_b = shadow.shadow.value();
            let expected = expected_value_exact(&shadow);
            (run, Some(w_b), Some(expected), true)
        }
        AlgorithmKind::ParallelLoadBalance => (parallel_load_balance(&instance)?, None, None, true),
    };
    let feasible = run.feasibility.is_ok();
    print_json(&RunOutput {
        record: run.to_record(),
        shadow_value,
        expected_value,
    })?;
    if feasible_mode && !feasible {
        eprintln!("infeasible allocation: {:?}", run.feasibility);
        return Ok(false);
    }
    Ok(true)
}

fn without_oversize(instance: &Instance) -> Result<Instance> {
    let report = validate_instance(instance, WeightMode::IgnoreOversize)?;
    if !report.removed.is_empty() {
        warn!("dropped {} edges heavier than their server's capacity", report.removed.len());
    }
    report.instance.context("validation returned no instance")
}

fn oracle(args: OracleArgs) -> Result<bool> {
    let instance = args.input.load()?;
    let result = offline_optimal(&instance, &args.budget.budget())?;
    if result.time_limit_hit {
        warn!("search budget exhausted; opt_value is a lower bound");
    }
    print_json(&result)?;
    Ok(true)
}

fn ratio(args: RatioArgs) -> Result<bool> {
    let instance = args.input.load()?;
    if args.mc_trials.is_some() && args.alg.alg != AlgorithmKind::RandomOnlineGreedy {
        bail!("--mc-trials applies to randomgreedy only");
    }
    let report = harness::ratio(&instance, &args.alg.spec(args.mc_trials), &args.budget.budget())?;
    if !report.opt_exact {
        warn!("search budget exhausted; bound checks skipped");
    }
    print_json(&report)?;
    for b in report.violations() {
        eprintln!("bound violated: {} observed {} < {}", b.name, b.observed, b.threshold);
    }
    if report.feasible_mode && !report.feasible {
        eprintln!("infeasible allocation");
    }
    Ok(!report.failed())
}

fn sweep(args: SweepArgs) -> Result<bool> {
    let mut config = SweepConfig::new(args.family, args.grid, args.seeds);
    config.seed_base = args.seed_base;
    if !args.alg.is_empty() {
        config.algorithms = args.alg;
    }
    config.alpha = args.alpha;
    config.mc_trials = args.mc_trials;
    config.budget = args.budget.budget();

    let result = harness::sweep(&config);
    write_csv_file(&result, &args.output)?;
    eprint!("{result}");
    for row in &result.rows {
        if let Err(e) = &row.outcome {
            warn!("n={} t={} seed={}: {e}", row.cell.servers, row.cell.steps, row.cell.seed);
        }
    }
    Ok(result.ok())
}

fn write_csv_file(result: &harness::SweepResult, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    harness::write_csv(result, &mut out)?;
    out.flush()?;
    Ok(())
}
