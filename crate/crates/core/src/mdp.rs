//! Suite-construction MDP: states, deterministic transitions and replay.
//!
//! A state is the ordered list of tests selected so far together with the
//! union of their coverage. Transitions add one test; invalid tests are
//! recorded but leave the covered set untouched.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coverage::{marginal_gain, CoverageUniverse, CoverageVector, UtilityConfig};
use crate::error::{Error, Result};
use crate::pool::{CandidatePool, TestCandidate};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteState {
    pub step_index: usize,
    pub selected_ids: Vec<String>,
    pub covered: CoverageVector,
    universe: Arc<CoverageUniverse>,
}

impl SuiteState {
    pub fn universe(&self) -> &CoverageUniverse {
        &self.universe
    }

    pub fn shared_universe(&self) -> Arc<CoverageUniverse> {
        Arc::clone(&self.universe)
    }

    /// Number of covered line units (`L_S`).
    pub fn covered_line_count(&self) -> usize {
        self.universe
            .kind_counts(&self.covered)
            .map(|(lines, _)| lines)
            .expect("state vector belongs to its universe")
    }

    pub fn covered_branch_count(&self) -> usize {
        self.universe
            .kind_counts(&self.covered)
            .map(|(_, branches)| branches)
            .expect("state vector belongs to its universe")
    }

    pub fn line_fraction(&self) -> f64 {
        fraction(self.covered_line_count(), self.universe.line_count())
    }

    pub fn branch_fraction(&self) -> f64 {
        fraction(self.covered_branch_count(), self.universe.branch_count())
    }

    pub fn contains(&self, test_id: &str) -> bool {
        self.selected_ids.iter().any(|id| id == test_id)
    }
}

/// `num / den`, or 0 when the universe has no units of that kind.
pub(crate) fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord<T> {
    pub state_before: SuiteState,
    pub action_id: String,
    pub valid: bool,
    pub gain: T,
    pub state_after: SuiteState,
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub task_id: String,
    pub transitions: Vec<TransitionRecord<T>>,
    pub final_line_coverage: f64,
    universe: Arc<CoverageUniverse>,
}

pub fn initial_state(universe: Arc<CoverageUniverse>) -> SuiteState {
    SuiteState {
        step_index: 0,
        selected_ids: Vec::new(),
        covered: universe.empty_vector(),
        universe,
    }
}

/// Applies one action. Duplicate ids and foreign vectors are rejected.
pub fn transition<T: Scalar>(
    state: &SuiteState,
    candidate: &TestCandidate,
    cfg: &UtilityConfig<T>,
) -> Result<TransitionRecord<T>> {
    state.universe.check(&candidate.coverage)?;
    if state.contains(&candidate.id) {
        return Err(Error::DuplicateId(candidate.id.clone()));
    }
    let mut after = state.clone();
    after.step_index += 1;
    after.selected_ids.push(candidate.id.clone());
    let gain = if candidate.valid {
        let g = marginal_gain(&state.universe, &state.covered, &candidate.coverage, cfg)?;
        after.covered.union_with(&candidate.coverage)?;
        g
    } else {
        T::zero()
    };
    Ok(TransitionRecord {
        state_before: state.clone(),
        action_id: candidate.id.clone(),
        valid: candidate.valid,
        gain,
        state_after: after,
    })
}

/// Folds [`transition`] over `candidates` from the empty state.
pub fn replay<T: Scalar>(
    task_id: &str,
    candidates: &[&TestCandidate],
    universe: Arc<CoverageUniverse>,
    cfg: &UtilityConfig<T>,
) -> Result<Trajectory<T>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput(format!(
            "task `{task_id}`: cannot replay an empty test sequence"
        )));
    }
    let mut traj = Trajectory::empty(task_id, universe);
    let mut state = initial_state(traj.shared_universe());
    for (position, c) in candidates.iter().enumerate() {
        let rec = transition(&state, c, cfg).map_err(|e| Error::Replay {
            position,
            source: Box::new(e),
        })?;
        state = rec.state_after.clone();
        traj.transitions.push(rec);
    }
    traj.final_line_coverage = state.line_fraction();
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageAtK {
    pub k: usize,
    pub line_fraction: f64,
    pub branch_fraction: f64,
}

/// Coverage of the first `k` tests for `k = 1..=L`.
pub fn coverage_at_k<T>(trajectory: &Trajectory<T>) -> Vec<CoverageAtK> {
    trajectory
        .transitions
        .iter()
        .map(|t| CoverageAtK {
            k: t.state_after.step_index,
            line_fraction: t.state_after.line_fraction(),
            branch_fraction: t.state_after.branch_fraction(),
        })
        .collect()
}

impl<T: Scalar> Trajectory<T> {
    pub fn empty(task_id: &str, universe: Arc<CoverageUniverse>) -> Self {
        Trajectory {
            task_id: task_id.to_owned(),
            transitions: Vec::new(),
            final_line_coverage: 0.0,
            universe,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn universe(&self) -> &CoverageUniverse {
        &self.universe
    }

    pub fn shared_universe(&self) -> Arc<CoverageUniverse> {
        Arc::clone(&self.universe)
    }

    pub fn gains(&self) -> Vec<T> {
        self.transitions.iter().map(|t| t.gain).collect()
    }

    pub fn action_ids(&self) -> Vec<&str> {
        self.transitions.iter().map(|t| t.action_id.as_str()).collect()
    }

    /// `s_0 .. s_L`.
    pub fn states(&self) -> Vec<&SuiteState> {
        match self.transitions.first() {
            None => Vec::new(),
            Some(first) => std::iter::once(&first.state_before)
                .chain(self.transitions.iter().map(|t| &t.state_after))
                .collect(),
        }
    }

    pub fn final_state(&self) -> SuiteState {
        self.transitions
            .last()
            .map(|t| t.state_after.clone())
            .unwrap_or_else(|| initial_state(self.shared_universe()))
    }

    pub fn to_doc(&self) -> TrajectoryDoc<T> {
        TrajectoryDoc {
            task_id: self.task_id.clone(),
            steps: self
                .transitions
                .iter()
                .map(|t| StepDoc {
                    test_id: t.action_id.clone(),
                    gain: t.gain,
                    covered_after: t.state_after.covered.to_ids(),
                })
                .collect(),
            final_line_coverage: self.final_line_coverage,
        }
    }

    /// Rebuilds a trajectory from its JSON form by replaying the recorded
    /// order against `pool`, and checks the recorded gains and covered sets.
    pub fn from_doc(doc: &TrajectoryDoc<T>, pool: &CandidatePool, cfg: &UtilityConfig<T>) -> Result<Self> {
        let ordered = doc
            .steps
            .iter()
            .map(|s| pool.get(&s.test_id).ok_or_else(|| Error::UnknownId(s.test_id.clone())))
            .collect::<Result<Vec<_>>>()?;
        let traj = replay(&doc.task_id, &ordered, pool.shared_universe(), cfg)?;
        for (i, (step, t)) in doc.steps.iter().zip(&traj.transitions).enumerate() {
            if !step.gain.approx_eq(t.gain) || step.covered_after != t.state_after.covered.to_ids() {
                return Err(Error::InvalidInput(format!(
                    "task `{}` step {i} (`{}`) does not replay to its recorded state",
                    doc.task_id, step.test_id
                )));
            }
        }
        Ok(traj)
    }
}

/// JSON form of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDoc<T> {
    pub task_id: String,
    pub steps: Vec<StepDoc<T>>,
    pub final_line_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDoc<T> {
    pub test_id: String,
    pub gain: T,
    pub covered_after: Vec<usize>,
}
