//! Execution outcomes and the validity gate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::coverage::{CoverageUniverse, CoverageVector};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    RuntimeError,
    SyntaxError,
    Timeout,
}

impl Status {
    pub fn parsed(self) -> bool {
        self != Status::SyntaxError
    }
}

/// Result of running one test against the program under test. Covered sets
/// hold unit ids of the task's universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub test_id: String,
    pub status: Status,
    pub covered_lines: BTreeSet<usize>,
    pub covered_branches: BTreeSet<usize>,
    pub has_assertion: bool,
    #[serde(default)]
    pub wall_time_ms: u64,
}

impl ExecutionOutcome {
    /// A test is valid iff it parsed, finished within the timeout, passed,
    /// and contains at least one assertion.
    pub fn is_valid(&self) -> bool {
        self.status == Status::Pass && self.has_assertion
    }

    /// Outcome recorded for an action that never produced an executable test
    /// (generator timeout, transport failure).
    pub fn failed(test_id: impl Into<String>, status: Status) -> Self {
        ExecutionOutcome {
            test_id: test_id.into(),
            status,
            covered_lines: BTreeSet::new(),
            covered_branches: BTreeSet::new(),
            has_assertion: false,
            wall_time_ms: 0,
        }
    }

    /// Outcome implied by a pool record: valid candidates passed with an
    /// assertion; the rest failed.
    pub fn from_pool(
        test_id: &str,
        universe: &CoverageUniverse,
        coverage: &CoverageVector,
        valid: bool,
        status: Option<Status>,
    ) -> Result<Self> {
        universe.check(coverage)?;
        let (mut lines, mut branches) = (BTreeSet::new(), BTreeSet::new());
        for id in coverage.ones() {
            match universe.kind(id) {
                Some(crate::coverage::UnitKind::Line) => lines.insert(id),
                _ => branches.insert(id),
            };
        }
        let status = match status {
            Some(s) => s,
            None if valid => Status::Pass,
            None => Status::Fail,
        };
        Ok(ExecutionOutcome {
            test_id: test_id.to_owned(),
            status,
            covered_lines: lines,
            covered_branches: branches,
            has_assertion: valid,
            wall_time_ms: 0,
        })
    }

    /// Coverage vector holding both covered sets.
    pub fn coverage(&self, universe: &CoverageUniverse) -> Result<CoverageVector> {
        universe.vector(
            self.covered_lines
                .iter()
                .chain(self.covered_branches.iter())
                .copied(),
        )
    }

    /// Coverage vector of the covered line units only.
    pub fn line_coverage(&self, universe: &CoverageUniverse) -> Result<CoverageVector> {
        universe.vector(self.covered_lines.iter().copied())
    }
}
