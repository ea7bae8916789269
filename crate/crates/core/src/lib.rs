//! Sequential test-suite construction over monotone submodular coverage
//! utilities.
//!
//! A program under test is described by a [`CoverageUniverse`] of line and
//! branch units. Candidate tests carry [`CoverageVector`]s over it. The
//! crate provides
//!
//! * the coverage utility and its marginal gains ([`coverage`]),
//! * naive, lazy and exhaustive selection under a budget ([`greedy`]),
//! * the suite-construction MDP with replayable trajectories ([`mdp`]),
//! * validity-gated step rewards and group-relative advantages ([`reward`]),
//! * uncovered-line annotation of the focal source ([`annotate`]),
//! * greedy-ordered training-data construction ([`pipeline`]),
//! * the episode loop, metrics and executor/generator clients
//!   ([`orchestrator`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f64` or to exact rationals.

pub mod annotate;
pub mod coverage;
pub mod error;
pub mod greedy;
pub mod mdp;
pub mod orchestrator;
pub mod outcome;
pub mod pipeline;
pub mod pool;
pub mod reward;
pub mod scalar;

pub use coverage::{
    marginal_gain, union_covered, utility, CoverageUnit, CoverageUniverse, CoverageVector,
    UnitKind, UtilityConfig,
};
pub use error::{Error, Result};
pub use greedy::{
    brute_force_optimal, greedy_select, lazy_greedy_select, verify_ratio, OptimalResult,
    RatioReport, SelectionResult,
};
pub use mdp::{coverage_at_k, initial_state, replay, transition, SuiteState, Trajectory};
pub use outcome::{ExecutionOutcome, Status};
pub use pipeline::{DatasetManifest, TaskBundle};
pub use pool::{CandidatePool, TestCandidate};
pub use reward::{RewardGroup, TrainingRecord};
pub use scalar::Scalar;

/// Exact rational scalar.
pub type Exact = num_rational::Ratio<i64>;

pub type UtilityConfigF64 = coverage::UtilityConfig<f64>;
pub type UtilityConfigExact = coverage::UtilityConfig<Exact>;
pub type SelectionResultF64 = greedy::SelectionResult<f64>;
pub type SelectionResultExact = greedy::SelectionResult<Exact>;
pub type OptimalResultF64 = greedy::OptimalResult<f64>;
pub type TrajectoryF64 = mdp::Trajectory<f64>;
pub type TrajectoryExact = mdp::Trajectory<Exact>;
pub type RewardGroupF64 = reward::RewardGroup<f64>;
pub type TrainingRecordF64 = reward::TrainingRecord<f64>;
pub type EpisodeReportF64 = orchestrator::EpisodeReport<f64>;
pub type BenchmarkReportF64 = orchestrator::BenchmarkReport<f64>;
