//! Step rewards and group-relative advantages.
//!
//! The reward of a test is its normalized marginal line-coverage gain,
//! gated by validity:
//!
//! ```text
//! delta_cov = (L_N - L_S) / (L_A - L_S)
//! r         = delta_cov * [valid]
//! A_i       = r_i - mean(r)
//! ```
//!
//! `L_A` is the number of line units of the program, `L_S` the lines covered
//! by the current suite and `L_N` the lines covered after adding the test.
//! The policy-gradient update consuming these records lives outside this
//! crate.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::SuiteState;
use crate::outcome::ExecutionOutcome;
use crate::scalar::Scalar;

/// Group size used when none is configured.
pub const DEFAULT_GROUP_SIZE: usize = 8;
/// KL coefficient reported alongside the records; never used here.
pub const DEFAULT_KL_BETA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoSettings {
    pub group_size: usize,
    pub kl_beta: f64,
    pub seed: u64,
}

impl Default for GrpoSettings {
    fn default() -> Self {
        GrpoSettings {
            group_size: DEFAULT_GROUP_SIZE,
            kl_beta: DEFAULT_KL_BETA,
            seed: 0,
        }
    }
}

/// Fraction of the still-uncovered lines that a test covers. Zero when
/// nothing was left to cover.
pub fn delta_cov<T: Scalar>(total: usize, covered_before: usize, covered_after: usize) -> Result<T> {
    if !(covered_before <= covered_after && covered_after <= total) {
        return Err(Error::InvalidInput(format!(
            "line counts must satisfy 0 <= L_S <= L_N <= L_A, got L_A={total} L_S={covered_before} L_N={covered_after}"
        )));
    }
    if total == covered_before {
        return Ok(T::zero());
    }
    Ok(T::from_count(covered_after - covered_before) / T::from_count(total - covered_before))
}

/// Reward of `outcome` taken from `state`; zero for invalid outcomes.
pub fn step_reward<T: Scalar>(state: &SuiteState, outcome: &ExecutionOutcome) -> Result<T> {
    let universe = state.universe();
    let added = outcome.line_coverage(universe)?;
    if !outcome.is_valid() {
        return Ok(T::zero());
    }
    let before = state.covered_line_count();
    let (after, _) = universe.kind_counts(&state.covered.union(&added)?)?;
    delta_cov(universe.line_count(), before, after)
}

/// `A_i = r_i - mean(r)`.
pub fn group_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let sum = rewards.iter().fold(T::zero(), |acc, &r| acc + r);
    let mean = sum / T::from_count(rewards.len());
    Ok(rewards.iter().map(|&r| r - mean).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSample<T> {
    pub action_text: String,
    pub outcome: ExecutionOutcome,
    pub reward: T,
}

/// `G` sampled actions under one state with their rewards and advantages.
#[derive(Debug, Clone)]
pub struct RewardGroup<T> {
    pub state: SuiteState,
    pub samples: Vec<RewardSample<T>>,
    pub advantages: Vec<T>,
}

impl<T: Scalar> RewardGroup<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rewards(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.reward).collect()
    }
}

pub fn build_reward_group<T: Scalar>(
    state: &SuiteState,
    actions: Vec<(String, ExecutionOutcome)>,
) -> Result<RewardGroup<T>> {
    if actions.len() < 2 {
        return Err(Error::GroupTooSmall(actions.len()));
    }
    let samples = actions
        .into_iter()
        .map(|(action_text, outcome)| {
            let reward = step_reward(state, &outcome)?;
            Ok(RewardSample {
                action_text,
                outcome,
                reward,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<T> = samples.iter().map(|s| s.reward).collect();
    let advantages = group_advantages(&rewards)?;
    Ok(RewardGroup {
        state: state.clone(),
        samples,
        advantages,
    })
}

/// One advantage-labeled sample for an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord<T> {
    pub task_id: String,
    pub state_text: String,
    pub action_text: String,
    pub reward: T,
    pub advantage: T,
    pub group_size: usize,
    pub seed: u64,
    pub universe_digest: String,
}

pub fn emit_training_records<T: Scalar>(
    task_id: &str,
    group: &RewardGroup<T>,
    annotated_state_text: &str,
    seed: u64,
) -> Vec<TrainingRecord<T>> {
    group
        .samples
        .iter()
        .zip(&group.advantages)
        .map(|(s, &a)| TrainingRecord {
            task_id: task_id.to_owned(),
            state_text: annotated_state_text.to_owned(),
            action_text: s.action_text.clone(),
            reward: s.reward,
            advantage: a,
            group_size: group.samples.len(),
            seed,
            universe_digest: group.state.universe().digest().to_owned(),
        })
        .collect()
}

pub fn write_training_records<T: Scalar, W: Write>(
    mut out: W,
    records: &[TrainingRecord<T>],
) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("writing training records", e))?;
    }
    Ok(())
}

pub fn read_training_records<T: Scalar, R: BufRead>(input: R) -> Result<Vec<TrainingRecord<T>>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("reading training records", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
