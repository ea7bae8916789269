//! Episode loop and benchmark evaluation.
//!
//! One episode builds a suite of at most `K` tests: render the current state
//! as annotated source, obtain an action from the policy, obtain its
//! execution outcome, transition, and record the reward. Pool policies read
//! outcomes from pool metadata; the external policy sends the state to a
//! generator and runs the returned test through an executor.

pub mod transport;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{render_state, AnnotationConfig};
use crate::coverage::UtilityConfig;
use crate::error::{Error, Result};
use crate::greedy::best_candidate;
use crate::mdp::{coverage_at_k, initial_state, transition, CoverageAtK, SuiteState, Trajectory};
use crate::outcome::{ExecutionOutcome, Status};
use crate::pipeline::TaskBundle;
use crate::pool::TestCandidate;
use crate::reward::step_reward;
use crate::scalar::Scalar;

use self::transport::{
    ExecRequest, Executor, ExecutorSpec, GenerateRequest, Generator, HttpGenerator,
    DEFAULT_EXEC_TIMEOUT_MS, GREEDY_INSTRUCTION,
};

/// Default suite budget.
pub const DEFAULT_BUDGET: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Highest marginal gain among the remaining valid pool candidates.
    PoolGreedy,
    /// Uniform over the remaining pool candidates.
    PoolRandom { seed: u64 },
    /// Tests written by a generator behind an HTTP endpoint.
    ExternalGenerator { endpoint: String, timeout_ms: u64 },
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig<T> {
    pub budget: usize,
    pub weights: UtilityConfig<T>,
    pub annotation: AnnotationConfig,
    pub exec_timeout_ms: u64,
    pub executor: Option<ExecutorSpec>,
}

impl<T: Scalar> Default for EpisodeConfig<T> {
    fn default() -> Self {
        EpisodeConfig {
            budget: DEFAULT_BUDGET,
            weights: UtilityConfig::default(),
            annotation: AnnotationConfig::default(),
            exec_timeout_ms: DEFAULT_EXEC_TIMEOUT_MS,
            executor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport<T> {
    pub test_id: String,
    pub status: Status,
    pub valid: bool,
    pub gain: T,
    pub reward: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    /// Outcome the reward was computed from.
    #[serde(skip)]
    pub outcome: Option<ExecutionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport<T> {
    pub task_id: String,
    pub steps: Vec<StepReport<T>>,
    pub final_line_coverage: f64,
    pub final_branch_coverage: f64,
    pub coverage_at_k: Vec<CoverageAtK>,
    pub syntactic_rate: f64,
    pub execution_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bug_detected: Option<bool>,
}

impl<T> EpisodeReport<T> {
    pub fn chosen(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.test_id.as_str()).collect()
    }

    /// Ids of the chosen tests that passed the validity gate.
    pub fn valid_chosen(&self) -> Vec<&str> {
        self.steps
            .iter()
            .filter(|s| s.valid)
            .map(|s| s.test_id.as_str())
            .collect()
    }
}

enum Action<'a> {
    Pool(&'a TestCandidate),
    Generated {
        text: String,
        outcome: ExecutionOutcome,
        diagnostic: Option<String>,
    },
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Runs one episode with generator and executor clients built from `policy`
/// and `cfg`.
pub fn run_episode<T: Scalar>(
    task: &TaskBundle,
    policy: &Policy,
    cfg: &EpisodeConfig<T>,
) -> Result<EpisodeReport<T>> {
    match policy {
        Policy::ExternalGenerator {
            endpoint,
            timeout_ms,
        } => {
            let spec = cfg.executor.as_ref().ok_or_else(|| {
                Error::InvalidConfig(
                    "the external generator policy needs an executor to score generated tests"
                        .into(),
                )
            })?;
            let mut generator = HttpGenerator::new(endpoint, *timeout_ms)?;
            let mut executor = spec.connect(cfg.exec_timeout_ms)?;
            run_external_episode(task, &mut generator, executor.as_mut(), cfg)
        }
        _ => run_pool_episode(task, policy, cfg),
    }
}

pub fn run_pool_episode<T: Scalar>(
    task: &TaskBundle,
    policy: &Policy,
    cfg: &EpisodeConfig<T>,
) -> Result<EpisodeReport<T>> {
    let mut rng = match policy {
        Policy::PoolRandom { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        Policy::PoolGreedy => None,
        Policy::ExternalGenerator { .. } => {
            return Err(Error::InvalidConfig("not a pool policy".into()))
        }
    };
    let pool = &task.pool;
    let mut order: Vec<&TestCandidate> = pool.candidates().iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    episode_loop(task, cfg, |state, _text| {
        let remaining: Vec<&TestCandidate> = order
            .iter()
            .copied()
            .filter(|c| !state.contains(&c.id))
            .collect();
        let pick = match rng.as_mut() {
            Some(rng) => remaining.choose(rng).copied(),
            None => best_candidate(
                pool.universe(),
                &state.covered,
                remaining.iter().filter(|c| c.valid).map(|c| (*c, *c)),
                &cfg.weights,
            )?
            .map(|(c, _)| c),
        };
        Ok(pick.map(Action::Pool))
    })
}

/// Episode driven by a generator; every generated test is scored by
/// `executor`. Generator or executor failures on one step make that step
/// invalid; an unreachable endpoint aborts the episode.
pub fn run_external_episode<T: Scalar>(
    task: &TaskBundle,
    generator: &mut dyn Generator,
    executor: &mut dyn Executor,
    cfg: &EpisodeConfig<T>,
) -> Result<EpisodeReport<T>> {
    let universe = task.pool.shared_universe();
    let mut history: Vec<String> = Vec::new();
    let mut step = 0usize;
    episode_loop(task, cfg, |_state, state_text| {
        step += 1;
        let id = format!("{}-gen-{step}", task.task_id);
        let request = GenerateRequest {
            state_text: state_text.to_owned(),
            history: history.clone(),
            instruction: GREEDY_INSTRUCTION.to_owned(),
        };
        let text = match generator.generate(&request) {
            Ok(text) => text,
            Err(Error::Transport(msg)) => {
                let status = if msg.contains("timed out") {
                    Status::Timeout
                } else {
                    Status::SyntaxError
                };
                return Ok(Some(Action::Generated {
                    outcome: ExecutionOutcome::failed(&id, status),
                    text: String::new(),
                    diagnostic: Some(format!("generator: {msg}")),
                }));
            }
            Err(e) => return Err(e),
        };
        history.push(text.clone());
        let exec = ExecRequest {
            id: id.clone(),
            focal_source: task.source_text.clone(),
            test_source: text.clone(),
            timeout_ms: cfg.exec_timeout_ms,
        };
        let (outcome, diagnostic) = match executor
            .execute(&exec)
            .and_then(|resp| resp.to_outcome(&id, &universe).map(|o| (o, resp.error_message)))
        {
            Ok((o, msg)) => (o, msg),
            Err(Error::Transport(msg)) => (
                ExecutionOutcome::failed(&id, Status::RuntimeError),
                Some(format!("executor: {msg}")),
            ),
            Err(e) => return Err(e),
        };
        Ok(Some(Action::Generated {
            text,
            outcome,
            diagnostic,
        }))
    })
}

fn episode_loop<'a, T, F>(task: &'a TaskBundle, cfg: &EpisodeConfig<T>, mut act: F) -> Result<EpisodeReport<T>>
where
    T: Scalar,
    F: FnMut(&SuiteState, &str) -> Result<Option<Action<'a>>>,
{
    if cfg.budget == 0 {
        return Err(Error::InvalidInput("budget K must be at least 1".into()));
    }
    let universe = task.pool.shared_universe();
    let executable: BTreeSet<usize> = universe.executable_lines().into_iter().collect();
    let mut state = initial_state(universe.clone());
    let mut trajectory = Trajectory::<T>::empty(&task.task_id, universe.clone());
    let mut steps = Vec::new();

    for _ in 0..cfg.budget {
        let covered: BTreeSet<usize> = universe.covered_lines(&state.covered).into_iter().collect();
        let state_text = render_state(&task.source_text, &executable, &covered, &cfg.annotation)
            .map_err(|e| Error::for_task(&task.task_id, e))?;
        let Some(action) = act(&state, &state_text)? else {
            break;
        };
        let (candidate, outcome, text, diagnostic) = match action {
            Action::Pool(c) => (c.clone(), c.outcome(&universe)?, c.source.clone(), None),
            Action::Generated {
                text,
                outcome,
                diagnostic,
            } => {
                let c = TestCandidate::from_outcome(&universe, &outcome, Some(text.clone()))?;
                (c, outcome, Some(text), diagnostic)
            }
        };
        let reward: T = step_reward(&state, &outcome)?;
        let record = transition(&state, &candidate, &cfg.weights)?;
        steps.push(StepReport {
            test_id: candidate.id.clone(),
            status: outcome.status,
            valid: candidate.valid,
            gain: record.gain,
            reward,
            test_text: text,
            diagnostic,
            outcome: Some(outcome),
        });
        state = record.state_after.clone();
        trajectory.transitions.push(record);
    }

    let attempted = steps.len();
    let parsed = steps.iter().filter(|s| s.status.parsed()).count();
    let valid = steps.iter().filter(|s| s.valid).count();
    Ok(EpisodeReport {
        task_id: task.task_id.clone(),
        final_line_coverage: state.line_fraction(),
        final_branch_coverage: state.branch_fraction(),
        coverage_at_k: coverage_at_k(&trajectory),
        syntactic_rate: rate(parsed, attempted),
        execution_rate: rate(valid, attempted),
        steps,
        mutation_score: None,
        bug_detected: None,
    })
}

/// One row of a kill matrix. Rows without `task_id` apply to every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KillRecord {
    pub mutant_id: String,
    pub killed_by: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

/// Status of one test on one solution. `solution_id == "canonical"` marks
/// the reference implementation; every other id is a buggy variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionOutcome {
    pub test_id: String,
    pub solution_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

pub const CANONICAL_SOLUTION: &str = "canonical";

fn read_jsonl<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_kill_matrix(path: &Path) -> Result<Vec<KillRecord>> {
    read_jsonl(path)
}

pub fn read_solution_outcomes(path: &Path) -> Result<Vec<SolutionOutcome>> {
    read_jsonl(path)
}

/// Fraction of mutants killed by at least one of `valid_tests`; `None` when
/// there are no mutants.
pub fn mutation_score(valid_tests: &[&str], kills: &[&KillRecord]) -> Option<f64> {
    if kills.is_empty() {
        return None;
    }
    let suite: BTreeSet<&str> = valid_tests.iter().copied().collect();
    let killed = kills
        .iter()
        .filter(|m| m.killed_by.iter().any(|t| suite.contains(t.as_str())))
        .count();
    Some(killed as f64 / kills.len() as f64)
}

/// True iff some test passes on the canonical solution and fails or errors
/// on the buggy one.
pub fn detect_bug(canonical: &BTreeMap<String, Status>, buggy: &BTreeMap<String, Status>) -> Result<bool> {
    if canonical.keys().ne(buggy.keys()) {
        let a: BTreeSet<&String> = canonical.keys().collect();
        let b: BTreeSet<&String> = buggy.keys().collect();
        let diff: Vec<&&String> = a.symmetric_difference(&b).collect();
        return Err(Error::InvalidInput(format!(
            "canonical and buggy outcomes cover different tests: {diff:?}"
        )));
    }
    Ok(canonical.iter().any(|(id, status)| {
        *status == Status::Pass && matches!(buggy[id], Status::Fail | Status::RuntimeError)
    }))
}

#[derive(Debug, Clone, Default)]
pub struct EvaluationInputs {
    pub kill_matrix: Option<Vec<KillRecord>>,
    pub solution_outcomes: Option<Vec<SolutionOutcome>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport<T> {
    pub episodes: Vec<EpisodeReport<T>>,
    pub failures: Vec<TaskFailure>,
    pub completed: usize,
    pub total: usize,
    pub line_coverage: f64,
    pub branch_coverage: f64,
    pub syntactic_rate: f64,
    pub execution_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mutation_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bug_detection_rate: Option<f64>,
    pub warnings: Vec<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Bug detection for one task: one verdict per buggy solution.
fn bug_verdicts(chosen: &[&str], outcomes: &[&SolutionOutcome]) -> Result<Vec<bool>> {
    let chosen: BTreeSet<&str> = chosen.iter().copied().collect();
    let mut by_solution: BTreeMap<&str, BTreeMap<String, Status>> = BTreeMap::new();
    for o in outcomes {
        if chosen.contains(o.test_id.as_str()) {
            by_solution
                .entry(o.solution_id.as_str())
                .or_default()
                .insert(o.test_id.clone(), o.status);
        }
    }
    let canonical = by_solution.remove(CANONICAL_SOLUTION).unwrap_or_default();
    by_solution
        .values()
        .map(|buggy| detect_bug(&canonical, buggy))
        .collect()
}

/// Runs one episode per task in parallel and aggregates macro averages over
/// the tasks that completed. A failing task is reported, never fatal.
pub fn evaluate<T: Scalar>(
    tasks: &[TaskBundle],
    policy: &Policy,
    cfg: &EpisodeConfig<T>,
    inputs: &EvaluationInputs,
) -> Result<BenchmarkReport<T>> {
    if tasks.is_empty() {
        return Err(Error::InvalidInput("no tasks to evaluate".into()));
    }
    let mut ordered: Vec<&TaskBundle> = tasks.iter().collect();
    ordered.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let results: Vec<(String, Result<EpisodeReport<T>>)> = ordered
        .par_iter()
        .map(|task| {
            let run = panic::catch_unwind(AssertUnwindSafe(|| run_episode(task, policy, cfg)))
                .unwrap_or_else(|p| {
                    let msg = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    Err(Error::for_task(&task.task_id, Error::InvalidInput(msg)))
                });
            (task.task_id.clone(), run)
        })
        .collect();

    let mut warnings = Vec::new();
    let kills_by_task = |task_id: &str| -> Option<Vec<&KillRecord>> {
        inputs.kill_matrix.as_ref().map(|rows| {
            rows.iter()
                .filter(|r| r.task_id.as_deref().map_or(true, |t| t == task_id))
                .collect()
        })
    };
    let outcomes_by_task: Option<HashMap<Option<&str>, Vec<&SolutionOutcome>>> =
        inputs.solution_outcomes.as_ref().map(|rows| {
            let mut m: HashMap<Option<&str>, Vec<&SolutionOutcome>> = HashMap::new();
            for r in rows {
                m.entry(r.task_id.as_deref()).or_default().push(r);
            }
            m
        });

    let mut episodes = Vec::new();
    let mut failures = Vec::new();
    let mut detections = (0usize, 0usize);
    for (task_id, result) in results {
        let mut ep = match result {
            Ok(ep) => ep,
            Err(e) => {
                log::error!("task `{task_id}` failed: {e}");
                failures.push(TaskFailure {
                    task_id,
                    error: e.to_string(),
                });
                continue;
            }
        };
        if let Some(kills) = kills_by_task(&task_id) {
            ep.mutation_score = mutation_score(&ep.valid_chosen(), &kills);
            if ep.mutation_score.is_none() {
                let w = format!("task `{task_id}`: kill matrix has no mutants; mutation score omitted");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        if let Some(by_task) = &outcomes_by_task {
            let mut rows: Vec<&SolutionOutcome> = Vec::new();
            rows.extend(by_task.get(&Some(task_id.as_str())).into_iter().flatten());
            rows.extend(by_task.get(&None).into_iter().flatten());
            match bug_verdicts(&ep.chosen(), &rows) {
                Ok(v) if v.is_empty() => {}
                Ok(v) => {
                    detections.0 += v.iter().filter(|&&d| d).count();
                    detections.1 += v.len();
                    ep.bug_detected = Some(v.iter().any(|&d| d));
                }
                Err(e) => {
                    let w = format!("task `{task_id}`: bug detection skipped: {e}");
                    log::warn!("{w}");
                    warnings.push(w);
                }
            }
        }
        episodes.push(ep);
    }

    let scored: Vec<f64> = episodes.iter().filter_map(|e| e.mutation_score).collect();
    Ok(BenchmarkReport {
        completed: episodes.len(),
        total: tasks.len(),
        line_coverage: mean(episodes.iter().map(|e| e.final_line_coverage)),
        branch_coverage: mean(episodes.iter().map(|e| e.final_branch_coverage)),
        syntactic_rate: mean(episodes.iter().map(|e| e.syntactic_rate)),
        execution_rate: mean(episodes.iter().map(|e| e.execution_rate)),
        mutation_score: (!scored.is_empty()).then(|| mean(scored.iter().copied())),
        bug_detection_rate: (detections.1 > 0).then(|| rate(detections.0, detections.1)),
        episodes,
        failures,
        warnings,
    })
}
