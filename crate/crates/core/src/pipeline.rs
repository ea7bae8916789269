//! Training-data construction from candidate pools.
//!
//! For every task: order the whole valid pool greedily, replay the order to
//! materialize each intermediate state, keep the task only if the final
//! suite covers more than `threshold` of the lines, and emit one record per
//! state `s_0 .. s_{L-1}` labeled with the greedy next action.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{project_uncovered, AnnotationConfig};
use crate::coverage::{CoverageUniverse, CoverageVector, UtilityConfig};
use crate::error::{Error, Result};
use crate::greedy::lazy_greedy_select;
use crate::mdp::{replay, Trajectory};
use crate::pool::{read_matrix, CandidatePool, TestCandidate};
use crate::scalar::Scalar;

/// Line-coverage threshold a trajectory must strictly exceed to be kept.
pub const DEFAULT_THRESHOLD: f64 = 0.90;

#[derive(Debug, Clone)]
pub struct TaskBundle {
    pub task_id: String,
    pub source_text: String,
    pub pool: CandidatePool,
}

impl TaskBundle {
    pub fn new(task_id: impl Into<String>, source_text: impl Into<String>, pool: CandidatePool) -> Result<Self> {
        let task_id = task_id.into();
        let source_text = source_text.into();
        if source_text.is_empty() {
            return Err(Error::InvalidInput(format!(
                "task `{task_id}`: focal source text is empty"
            )));
        }
        Ok(TaskBundle {
            task_id,
            source_text,
            pool,
        })
    }

    pub fn universe(&self) -> &CoverageUniverse {
        self.pool.universe()
    }

    /// Marks the lines of the focal source left uncovered by `covered`.
    pub fn annotate(&self, covered: &CoverageVector, cfg: &AnnotationConfig) -> Result<String> {
        let universe = self.universe();
        let executable: BTreeSet<usize> = universe.executable_lines().into_iter().collect();
        let covered: BTreeSet<usize> = universe.covered_lines(covered).into_iter().collect();
        project_uncovered(&self.source_text, &executable, &covered, cfg)
            .map_err(|e| Error::for_task(&self.task_id, e))
    }
}

/// Loads a task from a coverage-matrix file. The task id defaults to the file
/// stem; the header must carry `focal_source`.
pub fn ingest_candidates(path: &Path) -> Result<TaskBundle> {
    let matrix = read_matrix(path)?;
    let task_id = matrix.task_id.unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let source = matrix.focal_source.ok_or_else(|| Error::Parse {
        path: path.to_owned(),
        line: 1,
        message: "header has no `focal_source`".into(),
    })?;
    TaskBundle::new(task_id, source, matrix.pool)
}

/// Orders the entire valid pool: the greedy prefix while gains are positive,
/// then the remaining valid candidates by id with gain zero.
pub fn greedy_order<T: Scalar>(bundle: &TaskBundle, cfg: &UtilityConfig<T>) -> Result<Trajectory<T>> {
    let pool = &bundle.pool;
    let valid = pool.valid_sorted();
    if valid.is_empty() {
        log::warn!(
            "task `{}`: no valid candidates among {}; empty trajectory",
            bundle.task_id,
            pool.len()
        );
        return Ok(Trajectory::empty(&bundle.task_id, pool.shared_universe()));
    }
    let prefix = lazy_greedy_select(pool, valid.len(), cfg)?;
    let picked: HashSet<&str> = prefix.chosen.iter().map(String::as_str).collect();
    let mut order: Vec<&TestCandidate> = prefix
        .chosen
        .iter()
        .map(|id| pool.get(id).expect("selected from this pool"))
        .collect();
    order.extend(valid.into_iter().filter(|c| !picked.contains(c.id.as_str())));
    replay(&bundle.task_id, &order, pool.shared_universe(), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterDecision {
    Keep,
    Drop,
}

pub fn filter_trajectory<T: Scalar>(trajectory: &Trajectory<T>, threshold: f64) -> FilterDecision {
    if !trajectory.is_empty() && trajectory.final_line_coverage > threshold {
        FilterDecision::Keep
    } else {
        FilterDecision::Drop
    }
}

/// State `s_t` together with the action taken from it.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    pub task_id: String,
    pub step: usize,
    pub selected_ids: Vec<String>,
    pub covered: CoverageVector,
    pub greedy_action_id: String,
}

/// Splits a trajectory of length `L` into its `L` pre-action states.
pub fn decompose<T: Scalar>(trajectory: &Trajectory<T>) -> Vec<StateSnapshot> {
    trajectory
        .transitions
        .iter()
        .map(|t| StateSnapshot {
            task_id: trajectory.task_id.clone(),
            step: t.state_before.step_index,
            selected_ids: t.state_before.selected_ids.clone(),
            covered: t.state_before.covered.clone(),
            greedy_action_id: t.action_id.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub task_id: String,
    pub step: usize,
    pub selected_ids: Vec<String>,
    pub covered_units: Vec<usize>,
    pub annotated_source: String,
    pub greedy_action_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kept_tasks: usize,
    pub dropped_tasks: usize,
    pub total_states: usize,
    pub threshold: f64,
    pub seed: u64,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

struct TaskOutput {
    task_id: String,
    records: Option<Vec<DatasetRecord>>,
}

fn process_task<T: Scalar>(
    bundle: &TaskBundle,
    threshold: f64,
    cfg: &UtilityConfig<T>,
    annotation: &AnnotationConfig,
) -> Result<TaskOutput> {
    let trajectory = greedy_order(bundle, cfg).map_err(|e| Error::for_task(&bundle.task_id, e))?;
    if filter_trajectory(&trajectory, threshold) == FilterDecision::Drop {
        log::info!(
            "task `{}`: dropped (final line coverage {:.4} <= {threshold})",
            bundle.task_id,
            trajectory.final_line_coverage
        );
        return Ok(TaskOutput {
            task_id: bundle.task_id.clone(),
            records: None,
        });
    }
    let records = decompose(&trajectory)
        .into_iter()
        .map(|s| {
            Ok(DatasetRecord {
                annotated_source: bundle.annotate(&s.covered, annotation)?,
                covered_units: s.covered.to_ids(),
                task_id: s.task_id,
                step: s.step,
                selected_ids: s.selected_ids,
                greedy_action_id: s.greedy_action_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskOutput {
        task_id: bundle.task_id.clone(),
        records: Some(records),
    })
}

/// Builds the dataset and writes it as JSONL, ordered by task id then step.
pub fn write_dataset<T: Scalar, W: Write>(
    bundles: &[TaskBundle],
    threshold: f64,
    seed: u64,
    cfg: &UtilityConfig<T>,
    annotation: &AnnotationConfig,
    mut out: W,
) -> Result<DatasetManifest> {
    let mut ids = HashSet::new();
    for b in bundles {
        if !ids.insert(b.task_id.as_str()) {
            return Err(Error::DuplicateId(b.task_id.clone()));
        }
    }
    let mut order: Vec<&TaskBundle> = bundles.iter().collect();
    order.sort_by(|a, b| a.task_id.cmp(&b.task_id));

    let outputs = order
        .par_iter()
        .map(|b| process_task(b, threshold, cfg, annotation))
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest {
        kept_tasks: 0,
        dropped_tasks: 0,
        total_states: 0,
        threshold,
        seed,
        kept: Vec::new(),
        dropped: Vec::new(),
    };
    for task in outputs {
        let Some(records) = task.records else {
            manifest.dropped_tasks += 1;
            manifest.dropped.push(task.task_id);
            continue;
        };
        for rec in &records {
            serde_json::to_writer(&mut out, rec).map_err(|e| Error::for_task(&task.task_id, e.into()))?;
            out.write_all(b"\n")
                .map_err(|e| Error::for_task(&task.task_id, Error::io("writing dataset", e)))?;
        }
        manifest.kept_tasks += 1;
        manifest.total_states += records.len();
        manifest.kept.push(task.task_id);
    }
    out.flush().map_err(|e| Error::io("flushing dataset", e))?;
    Ok(manifest)
}

pub fn build_dataset<T: Scalar>(
    bundles: &[TaskBundle],
    threshold: f64,
    seed: u64,
    cfg: &UtilityConfig<T>,
    annotation: &AnnotationConfig,
    out_path: &Path,
) -> Result<DatasetManifest> {
    let file = File::create(out_path)
        .map_err(|e| Error::io(format!("creating {}", out_path.display()), e))?;
    write_dataset(bundles, threshold, seed, cfg, annotation, BufWriter::new(file))
}
