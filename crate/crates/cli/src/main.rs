use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use stepcov_core::annotate::{render_state, AnnotationConfig, DEFAULT_MARKER};
use stepcov_core::greedy::{brute_force_optimal, greedy_select, lazy_greedy_select, verify_ratio};
use stepcov_core::mdp::{coverage_at_k, replay, CoverageAtK, TrajectoryDoc};
use stepcov_core::orchestrator::transport::{ExecutorSpec, DEFAULT_EXEC_TIMEOUT_MS};
use stepcov_core::orchestrator::{
    evaluate, read_kill_matrix, read_solution_outcomes, run_episode, EpisodeConfig, EvaluationInputs, Policy,
    DEFAULT_BUDGET,
};
use stepcov_core::pipeline::{build_dataset, greedy_order, ingest_candidates, DEFAULT_THRESHOLD};
use stepcov_core::pool::read_matrix;
use stepcov_core::{Exact, OptimalResult, RatioReport, Scalar, SelectionResult, TaskBundle, Trajectory, UtilityConfig};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

/// Coverage-driven test selection, training-data construction and episode
/// evaluation.
#[derive(Debug, Parser)]
#[command(name = "stepcov", version)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Test budget.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    k: usize,
    /// Unit weights, e.g. `line=1,branch=0.5`.
    #[arg(long, global = true, default_value = "line=1,branch=1")]
    weights: String,
    /// Executor: an http(s) endpoint or a worker command line.
    #[arg(long, global = true)]
    executor: Option<String>,
    /// Generator endpoint for the external policy.
    #[arg(long, global = true)]
    generator: Option<String>,
    /// Output file (stdout if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use exact rational arithmetic instead of f64.
    #[arg(long, global = true)]
    exact: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Naive,
    Lazy,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyKind {
    Greedy,
    Random,
    External,
}

#[derive(Debug, Args)]
struct EpisodeArgs {
    #[arg(long, value_enum, default_value = "greedy")]
    policy: PolicyKind,
    /// Generator request timeout.
    #[arg(long, default_value_t = 30_000)]
    generator_timeout_ms: u64,
    /// Per-test execution limit.
    #[arg(long, default_value_t = DEFAULT_EXEC_TIMEOUT_MS)]
    exec_timeout_ms: u64,
    /// Lines of context kept around uncovered lines in the state text.
    #[arg(long)]
    context: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select up to K tests from a coverage matrix.
    Select {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_enum, default_value = "lazy")]
        mode: Mode,
    },
    /// Greedy order of the whole valid pool, as a trajectory.
    Order {
        #[arg(long)]
        pool: PathBuf,
    },
    /// Replay a trajectory file or an explicit id order against a pool.
    Replay {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_delimiter = ',', conflicts_with = "trajectory", required_unless_present = "trajectory")]
        ids: Vec<String>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Mark uncovered executable lines of a source file.
    Annotate {
        #[arg(long)]
        source: PathBuf,
        /// JSON object with `executable_lines` and `covered_lines`.
        #[arg(long)]
        coverage: PathBuf,
        #[arg(long, default_value = DEFAULT_MARKER)]
        marker: String,
        #[arg(long)]
        context: Option<usize>,
    },
    /// Build the step-level dataset from coverage matrices.
    BuildDataset {
        #[arg(required = true)]
        pools: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Manifest file (stdout if absent).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run one episode on a task.
    RunEpisode {
        #[arg(long)]
        pool: PathBuf,
        #[command(flatten)]
        episode: EpisodeArgs,
    },
    /// Run one episode per task and aggregate metrics.
    Evaluate {
        #[arg(required = true)]
        pools: Vec<PathBuf>,
        #[command(flatten)]
        episode: EpisodeArgs,
        #[arg(long)]
        kill_matrix: Option<PathBuf>,
        #[arg(long)]
        buggy_outcomes: Option<PathBuf>,
    },
    /// Compare greedy selection against the exhaustive optimum.
    VerifyBound {
        #[arg(long)]
        pool: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
struct LineCoverage {
    executable_lines: BTreeSet<usize>,
    covered_lines: BTreeSet<usize>,
}

#[derive(Debug, Serialize)]
struct ReplayReport<T> {
    #[serde(flatten)]
    trajectory: TrajectoryDoc<T>,
    final_branch_coverage: f64,
    coverage_at_k: Vec<CoverageAtK>,
}

#[derive(Debug, Serialize)]
struct BoundReport<T> {
    greedy: SelectionResult<T>,
    optimal: OptimalResult<T>,
    #[serde(flatten)]
    report: RatioReport,
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| format!("writing {}: {e}", path.display()))?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn emit<S: Serialize>(out: Option<&Path>, value: &S) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_output(out, &text)
}

fn read_text(path: &Path) -> CliResult<String> {
    Ok(fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?)
}

fn policy(cli: &Cli, args: &EpisodeArgs) -> CliResult<Policy> {
    Ok(match args.policy {
        PolicyKind::Greedy => Policy::PoolGreedy,
        PolicyKind::Random => Policy::PoolRandom { seed: cli.seed },
        PolicyKind::External => Policy::ExternalGenerator {
            endpoint: cli
                .generator
                .clone()
                .ok_or("the external policy needs --generator <endpoint>")?,
            timeout_ms: args.generator_timeout_ms,
        },
    })
}

fn episode_config<T: Scalar>(cli: &Cli, args: &EpisodeArgs, weights: UtilityConfig<T>) -> CliResult<EpisodeConfig<T>> {
    let mut annotation = AnnotationConfig::default();
    annotation.context_window = args.context;
    Ok(EpisodeConfig {
        budget: cli.k,
        weights,
        annotation,
        exec_timeout_ms: args.exec_timeout_ms,
        executor: cli.executor.as_deref().map(ExecutorSpec::parse).transpose()?,
    })
}

fn load_tasks(paths: &[PathBuf]) -> CliResult<Vec<TaskBundle>> {
    Ok(paths.iter().map(|p| ingest_candidates(p)).collect::<Result<Vec<_>, _>>()?)
}

fn run<T: Scalar>(cli: &Cli) -> CliResult {
    let weights = UtilityConfig::<T>::parse(&cli.weights)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Select { pool, mode } => {
            let pool = read_matrix(pool)?.pool;
            match mode {
                Mode::Naive => emit(out, &greedy_select(&pool, cli.k, &weights)?),
                Mode::Lazy => emit(out, &lazy_greedy_select(&pool, cli.k, &weights)?),
                Mode::Oracle => emit(out, &brute_force_optimal(&pool, cli.k, &weights)?),
            }
        }
        Command::Order { pool } => {
            let task = ingest_candidates(pool)?;
            emit(out, &greedy_order(&task, &weights)?.to_doc())
        }
        Command::Replay {
            pool,
            ids,
            trajectory,
        } => {
            let pool = read_matrix(pool)?.pool;
            let traj: Trajectory<T> = match trajectory {
                Some(path) => {
                    let doc: TrajectoryDoc<T> = serde_json::from_str(&read_text(path)?)?;
                    Trajectory::from_doc(&doc, &pool, &weights)?
                }
                None => {
                    let ordered = ids
                        .iter()
                        .map(|id| pool.get(id).ok_or_else(|| format!("unknown test id `{id}`")))
                        .collect::<Result<Vec<_>, _>>()?;
                    replay("replay", &ordered, pool.shared_universe(), &weights)?
                }
            };
            emit(
                out,
                &ReplayReport {
                    trajectory: traj.to_doc(),
                    final_branch_coverage: traj.final_state().branch_fraction(),
                    coverage_at_k: coverage_at_k(&traj),
                },
            )
        }
        Command::Annotate {
            source,
            coverage,
            marker,
            context,
        } => {
            let mut cfg = AnnotationConfig::with_marker(marker.clone())?;
            cfg.context_window = *context;
            let cov: LineCoverage = serde_json::from_reader(BufReader::new(
                File::open(coverage).map_err(|e| format!("opening {}: {e}", coverage.display()))?,
            ))?;
            let text = render_state(&read_text(source)?, &cov.executable_lines, &cov.covered_lines, &cfg)?;
            write_output(out, &text)
        }
        Command::BuildDataset {
            pools,
            threshold,
            manifest,
        } => {
            let out = out.ok_or("build-dataset needs --out <dataset.jsonl>")?;
            let tasks = load_tasks(pools)?;
            let m = build_dataset(&tasks, *threshold, cli.seed, &weights, &AnnotationConfig::default(), out)?;
            log::info!(
                "kept {} of {} tasks, {} states",
                m.kept_tasks,
                m.kept_tasks + m.dropped_tasks,
                m.total_states
            );
            emit(manifest.as_deref(), &m)
        }
        Command::RunEpisode { pool, episode } => {
            let task = ingest_candidates(pool)?;
            let report = run_episode(&task, &policy(cli, episode)?, &episode_config(cli, episode, weights)?)?;
            emit(out, &report)
        }
        Command::Evaluate {
            pools,
            episode,
            kill_matrix,
            buggy_outcomes,
        } => {
            let tasks = load_tasks(pools)?;
            let inputs = EvaluationInputs {
                kill_matrix: kill_matrix.as_deref().map(read_kill_matrix).transpose()?,
                solution_outcomes: buggy_outcomes.as_deref().map(read_solution_outcomes).transpose()?,
            };
            let report = evaluate(&tasks, &policy(cli, episode)?, &episode_config(cli, episode, weights)?, &inputs)?;
            for f in &report.failures {
                log::warn!("task `{}` failed: {}", f.task_id, f.error);
            }
            emit(out, &report)
        }
        Command::VerifyBound { pool } => {
            let pool = read_matrix(pool)?.pool;
            let greedy = greedy_select(&pool, cli.k, &weights)?;
            let optimal = brute_force_optimal(&pool, cli.k, &weights)?;
            let report = verify_ratio(&greedy, &optimal)?;
            emit(
                out,
                &BoundReport {
                    greedy,
                    optimal,
                    report,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = if cli.exact { run::<Exact>(&cli) } else { run::<f64>(&cli) };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
