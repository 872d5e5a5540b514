//! The `gradcode` command line.
//!
//! Exit codes: 0 success, 1 validation failure (bad flags, bad files,
//! failed verification), 2 I/O trouble, 3 infeasibility (a scheme or
//! straggler budget that cannot work, or rounds that could not decode).

use crate::coding::{self, CodingError, CodingStrategy, SchemeKind};
use crate::net::{self, Master, MasterOptions, NetError, WorkerOptions};
use crate::profiles::{self, ClusterConfig, ProfileError};
use crate::sim::{self, SimError, StragglerModel, Targets};
use crate::{allocation, groups};
use clap::{Args, Parser, Subcommand};
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "gradcode",
    version,
    about = "Straggler-tolerant gradient coding: allocation, construction, simulation, live runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a coding strategy from a cluster config and print its support
    GenStrategy {
        /// Cluster config JSON
        #[arg(long)]
        config: PathBuf,
        /// naive | cyclic | heter_aware | group_based
        #[arg(long, default_value = "heter_aware")]
        scheme: String,
        /// Override the config's auxiliary seed
        #[arg(long)]
        seed: Option<u64>,
        /// Write the strategy JSON here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a strategy file: robustness, construction identity, support, timing
    Verify {
        /// Strategy JSON produced by gen-strategy
        strategy: PathBuf,
    },
    /// Show a config's exact-cover groups, before and after pruning
    FindGroups {
        /// Cluster config JSON
        #[arg(long)]
        config: PathBuf,
    },
    /// Simulate decode rounds of one scheme under a straggler model
    Simulate {
        /// Cluster config JSON
        #[arg(long)]
        config: PathBuf,
        /// naive | cyclic | heter_aware | group_based
        #[arg(long, default_value = "heter_aware")]
        scheme: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Simulate every scheme on the same rounds and summarize
    Compare {
        /// Cluster config JSON
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Serve a strategy to live workers and decode rounds as they arrive
    RunMaster {
        /// Strategy JSON produced by gen-strategy
        #[arg(long)]
        strategy: PathBuf,
        /// Listen address; port 0 picks one (printed on startup)
        #[arg(long, default_value = "127.0.0.1:7000")]
        listen: String,
        /// Rounds to run
        #[arg(long, default_value_t = 5)]
        rounds: u32,
        /// Gradient dimension
        #[arg(long, default_value_t = 16)]
        dim: usize,
        /// Seed for the session's synthetic gradients
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-round decode deadline in milliseconds
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        /// How long to wait for the full cluster before starting anyway
        #[arg(long, default_value_t = 10000)]
        grace_ms: u64,
        /// Append one JSON line per round here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join a live master as one worker
    RunWorker {
        /// Master address
        #[arg(long)]
        connect: String,
        /// 1-based worker id matching a strategy row
        #[arg(long)]
        worker_id: u16,
        /// Multiplier on emulated compute time (stage a straggler with 10)
        #[arg(long, default_value_t = 1.0)]
        delay_factor: f64,
        /// Emulated milliseconds of work per assigned partition
        #[arg(long, default_value_t = 20)]
        work_ms: u64,
        /// Connection attempts per outage
        #[arg(long, default_value_t = 40)]
        attempts: u32,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Rounds to simulate
    #[arg(long, default_value_t = 10)]
    rounds: u32,
    /// none | delay | failure
    #[arg(long, default_value = "none")]
    model: String,
    /// Arrival multiplier for delayed stragglers
    #[arg(long, default_value_t = 10.0)]
    delay_factor: f64,
    /// Fixed straggler set, 1-based and comma-separated (e.g. "2,5")
    #[arg(long)]
    targets: Option<String>,
    /// Random stragglers per round when --targets is absent
    /// (default: the config's straggler budget)
    #[arg(long)]
    random_stragglers: Option<usize>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Write CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// Error-to-exit-code mapping
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    WriteFailed {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn profile_exit(err: &ProfileError) -> i32 {
    match err {
        ProfileError::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn coding_exit(err: &CodingError) -> i32 {
    match err {
        CodingError::Io { .. } => EXIT_IO,
        CodingError::Parse(_) | CodingError::InvalidStrategy(_) => EXIT_VALIDATION,
        CodingError::Profile(p) => profile_exit(p),
        _ => EXIT_INFEASIBLE,
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_VALIDATION,
            CliError::WriteFailed { .. } => EXIT_IO,
            CliError::Coding(err) => coding_exit(err),
            CliError::Profile(err) => profile_exit(err),
            CliError::Sim(SimError::Coding(err)) => coding_exit(err),
            CliError::Sim(SimError::Undecodable { .. }) => EXIT_INFEASIBLE,
            CliError::Net(NetError::Io(_)) => EXIT_IO,
            CliError::Net(_) => EXIT_IO,
        }
    }
}

/// Parses the process arguments, runs the command and returns the exit
/// code for `main` to pass to the OS.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::GenStrategy { config, scheme, seed, out } => gen_strategy(config, scheme, seed, out),
        Command::Verify { strategy } => verify(strategy),
        Command::FindGroups { config } => find_groups(config),
        Command::Simulate { config, scheme, run } => simulate(config, scheme, run),
        Command::Compare { config, run } => compare(config, run),
        Command::RunMaster { strategy, listen, rounds, dim, seed, timeout_ms, grace_ms, out } => {
            run_master(strategy, listen, rounds, dim, seed, timeout_ms, grace_ms, out)
        }
        Command::RunWorker { connect, worker_id, delay_factor, work_ms, attempts } => {
            run_worker(connect, worker_id, delay_factor, work_ms, attempts)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared argument handling
// ---------------------------------------------------------------------------

fn parse_scheme(text: &str) -> Result<SchemeKind, CliError> {
    SchemeKind::parse(text).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown scheme {text:?}; expected naive, cyclic, heter_aware or group_based"
        ))
    })
}

/// Parses a 1-based comma-separated worker list into 0-based indices.
fn parse_targets(text: &str, num_workers: usize) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|part| {
            let id: usize = part
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad worker id {:?} in --targets", part.trim())))?;
            if id == 0 || id > num_workers {
                return Err(CliError::Usage(format!(
                    "worker id {id} out of range 1..={num_workers} in --targets"
                )));
            }
            Ok(id - 1)
        })
        .collect()
}

fn build_model(run: &RunArgs, config: &ClusterConfig) -> Result<StragglerModel, CliError> {
    let targets = || -> Result<Targets, CliError> {
        Ok(match &run.targets {
            Some(text) => Targets::Fixed(parse_targets(text, config.num_workers())?),
            None => Targets::Random {
                count: run.random_stragglers.unwrap_or(config.num_stragglers),
            },
        })
    };
    match run.model.as_str() {
        "none" => Ok(StragglerModel::None),
        "delay" => {
            if !(run.delay_factor > 0.0) || !run.delay_factor.is_finite() {
                return Err(CliError::Usage(format!(
                    "--delay-factor must be positive, got {}",
                    run.delay_factor
                )));
            }
            Ok(StragglerModel::Delay { factor: run.delay_factor, targets: targets()? })
        }
        "failure" => Ok(StragglerModel::Failure { targets: targets()? }),
        other => Err(CliError::Usage(format!(
            "unknown model {other:?}; expected none, delay or failure"
        ))),
    }
}

/// Writes `text` to `path`, or to stdout when no path is given.
fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::WriteFailed {
            path: path.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn format_group(group: &[usize]) -> String {
    let ids: Vec<String> = group.iter().map(|&w| format!("W{}", w + 1)).collect();
    format!("{{{}}}", ids.join(","))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn gen_strategy(
    config: PathBuf,
    scheme: String,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let cfg = profiles::load_config(&config)?;
    let kind = parse_scheme(&scheme)?;
    let strategy = coding::build_strategy(&cfg, kind, seed)?;
    match kind {
        SchemeKind::GroupBased => print!("{}", strategy.to_skeleton_text()),
        _ => print!("{}", strategy.support.to_star_text()),
    }
    if let Some(path) = out {
        strategy.save(&path)?;
    }
    Ok(0)
}

fn verify(path: PathBuf) -> Result<i32, CliError> {
    let strategy = CodingStrategy::load(&path)?;
    let mut all_pass = true;
    let mut check = |name: &str, pass: bool, detail: String| {
        all_pass &= pass;
        let verdict = if pass { "pass" } else { "fail" };
        if detail.is_empty() {
            println!("{name}: {verdict}");
        } else {
            println!("{name}: {verdict} ({detail})");
        }
    };

    let robust = coding::verify_condition1(&strategy)?;
    check(
        "robustness",
        robust,
        format!("straggler budget {}", strategy.num_stragglers),
    );

    let deviation = coding::construction_residual(&strategy)?;
    let tolerance = coding::span_residual_tolerance(strategy.num_partitions);
    check(
        "construction",
        deviation <= tolerance,
        format!("max deviation {deviation:.2e}"),
    );

    let m = strategy.num_workers;
    let k = strategy.num_partitions;
    let support_ok =
        (0..m).all(|i| (0..k).all(|j| strategy.support.get(i, j) == strategy.is_nonzero(i, j)));
    check("support", support_ok, String::new());

    if robust {
        let worst = sim::worst_case_time(&strategy)?;
        let total: f64 = strategy.throughputs.iter().sum();
        let data_units = k as f64 * strategy.partition_weight;
        let bound = (strategy.num_stragglers + 1) as f64 * data_units / total;
        println!("timing: worst_case={worst} proportional_bound={bound} ratio={:.6}", worst / bound);
    } else {
        println!("timing: skipped (not robust)");
    }

    println!("verdict: {}", if all_pass { "pass" } else { "fail" });
    Ok(if all_pass { 0 } else { EXIT_VALIDATION })
}

fn find_groups(config: PathBuf) -> Result<i32, CliError> {
    let cfg = profiles::load_config(&config)?;
    let counts = allocation::compute_partition_counts(&cfg).map_err(CodingError::from)?;
    let alloc = allocation::cyclic_allocate(&counts, cfg.num_partitions).map_err(CodingError::from)?;
    let support = allocation::support_structure(&alloc, cfg.num_partitions);
    let all = groups::find_all_groups(&support).map_err(CodingError::from)?;
    let pruned = groups::prune_groups(&all);
    println!("groups: {}", all.len());
    for group in &all {
        println!("{}", format_group(group));
    }
    println!("pruned: {}", pruned.len());
    for group in &pruned {
        println!("{}", format_group(group));
    }
    Ok(0)
}

fn simulate(config: PathBuf, scheme: String, run: RunArgs) -> Result<i32, CliError> {
    let cfg = profiles::load_config(&config)?;
    let kind = parse_scheme(&scheme)?;
    let model = build_model(&run, &cfg)?;
    let seed = run.seed.unwrap_or_else(|| cfg.effective_seed());
    let strategy = coding::build_strategy(&cfg, kind, Some(seed))?;
    let traces = sim::simulate(&strategy, &model, seed, run.rounds);
    emit(&run.out, &sim::simulate_csv(kind, &traces))?;
    Ok(0)
}

fn compare(config: PathBuf, run: RunArgs) -> Result<i32, CliError> {
    let cfg = profiles::load_config(&config)?;
    let model = build_model(&run, &cfg)?;
    let seed = run.seed.unwrap_or_else(|| cfg.effective_seed());
    let reports = sim::compare_schemes(&cfg, &model, run.rounds, seed);
    emit(&run.out, &sim::compare_csv(&reports))?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn run_master(
    strategy_path: PathBuf,
    listen: String,
    rounds: u32,
    dim: usize,
    seed: u64,
    timeout_ms: u64,
    grace_ms: u64,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let strategy = CodingStrategy::load(&strategy_path)?;
    let num_workers = strategy.num_workers;
    let options = MasterOptions {
        rounds,
        dim,
        seed,
        round_timeout: Duration::from_millis(timeout_ms),
        connect_grace: Duration::from_millis(grace_ms),
    };
    let master = Master::bind(strategy, &listen, options)?;
    println!("listening addr={} workers={num_workers}", master.local_addr()?);
    let _ = std::io::stdout().flush();

    let mut jsonl = match &out {
        Some(path) => Some(std::fs::File::create(path).map_err(|source| CliError::WriteFailed {
            path: path.display().to_string(),
            source,
        })?),
        None => None,
    };
    let mut write_error: Option<std::io::Error> = None;

    let reports = master.run(|report| {
        let active: Vec<String> = report.active.iter().map(|&w| (w + 1).to_string()).collect();
        println!(
            "round={} status={} elapsed_ms={:.3} active={}",
            report.round,
            if report.success { "ok" } else { "failed" },
            report.elapsed.as_secs_f64() * 1000.0,
            active.join(";"),
        );
        let _ = std::io::stdout().flush();
        if let Some(file) = &mut jsonl {
            let line = serde_json::json!({
                "round": report.round,
                "success": report.success,
                "elapsed_ms": report.elapsed.as_secs_f64() * 1000.0,
                "active": report.active.iter().map(|&w| w + 1).collect::<Vec<usize>>(),
                "gradient": report.gradient,
            });
            if let Err(err) = writeln!(file, "{line}") {
                write_error.get_or_insert(err);
            }
        }
    })?;

    if let Some(source) = write_error {
        let path = out.map(|p| p.display().to_string()).unwrap_or_default();
        return Err(CliError::WriteFailed { path, source });
    }
    let decoded = reports.iter().filter(|r| r.success).count();
    println!("session rounds={} decoded={decoded}", reports.len());
    Ok(if decoded == reports.len() { 0 } else { EXIT_INFEASIBLE })
}

fn run_worker(
    connect: String,
    worker_id: u16,
    delay_factor: f64,
    work_ms: u64,
    attempts: u32,
) -> Result<i32, CliError> {
    if worker_id == 0 {
        return Err(CliError::Usage("--worker-id is 1-based".to_string()));
    }
    if !(delay_factor >= 0.0) || !delay_factor.is_finite() {
        return Err(CliError::Usage(format!(
            "--delay-factor must be finite and non-negative, got {delay_factor}"
        )));
    }
    let options = WorkerOptions {
        connect,
        worker_id,
        delay_factor,
        work_ms,
        connect_attempts: attempts,
        ..WorkerOptions::default()
    };
    net::run_worker(&options)?;
    Ok(0)
}
