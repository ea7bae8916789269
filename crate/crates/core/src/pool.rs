//! Candidate tests, candidate pools and the coverage-matrix JSONL format.
//!
//! A matrix file starts with a header record carrying the universe,
//! followed by one record per candidate:
//!
//! ```text
//! {"universe": [{"id": 0, "kind": "line", "label": "f.py:1"}, ...], "line_count": 6}
//! {"test_id": "t1", "covered_units": [0, 2], "valid": true, "source": "def test_..."}
//! ```
//!
//! The header may additionally carry `task_id` and `focal_source`; candidate
//! records may carry an explicit `status`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coverage::{CoverageUnit, CoverageUniverse, CoverageVector, UniverseHeader};
use crate::error::{Error, Result};
use crate::outcome::{ExecutionOutcome, Status};

#[derive(Debug, Clone, PartialEq)]
pub struct TestCandidate {
    pub id: String,
    pub coverage: CoverageVector,
    pub valid: bool,
    pub source: Option<String>,
    pub status: Option<Status>,
}

impl TestCandidate {
    pub fn new(id: impl Into<String>, coverage: CoverageVector, valid: bool) -> Self {
        TestCandidate {
            id: id.into(),
            coverage,
            valid,
            source: None,
            status: None,
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    /// Builds a candidate from an execution outcome. Validity follows the
    /// outcome's gate.
    pub fn from_outcome(
        universe: &CoverageUniverse,
        outcome: &ExecutionOutcome,
        source: Option<String>,
    ) -> Result<Self> {
        Ok(TestCandidate {
            id: outcome.test_id.clone(),
            coverage: outcome.coverage(universe)?,
            valid: outcome.is_valid(),
            source,
            status: Some(outcome.status),
        })
    }

    pub fn outcome(&self, universe: &CoverageUniverse) -> Result<ExecutionOutcome> {
        ExecutionOutcome::from_pool(&self.id, universe, &self.coverage, self.valid, self.status)
    }
}

/// A finite pool of candidate tests over one universe.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    universe: Arc<CoverageUniverse>,
    candidates: Vec<TestCandidate>,
    index: HashMap<String, usize>,
}

impl CandidatePool {
    pub fn new(universe: Arc<CoverageUniverse>, candidates: Vec<TestCandidate>) -> Result<Self> {
        let mut index = HashMap::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            universe.check(&c.coverage)?;
            if index.insert(c.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(c.id.clone()));
            }
        }
        Ok(CandidatePool {
            universe,
            candidates,
            index,
        })
    }

    pub fn universe(&self) -> &CoverageUniverse {
        &self.universe
    }

    pub fn shared_universe(&self) -> Arc<CoverageUniverse> {
        Arc::clone(&self.universe)
    }

    pub fn candidates(&self) -> &[TestCandidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TestCandidate> {
        self.index.get(id).map(|&i| &self.candidates[i])
    }

    /// Valid candidates sorted by id.
    pub fn valid_sorted(&self) -> Vec<&TestCandidate> {
        let mut v: Vec<&TestCandidate> = self.candidates.iter().filter(|c| c.valid).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Hex SHA-256 identifying the pool contents, independent of record order.
    pub fn digest(&self) -> String {
        let mut rows: Vec<String> = self
            .candidates
            .iter()
            .map(|c| {
                let ids: Vec<String> = c.coverage.ones().map(|i| i.to_string()).collect();
                format!("{}\t{}\t{}", c.id, c.valid, ids.join(","))
            })
            .collect();
        rows.sort();
        let mut hasher = Sha256::new();
        hasher.update(self.universe.digest().as_bytes());
        for row in rows {
            hasher.update(b"\n");
            hasher.update(row.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    universe: Vec<CoverageUnit>,
    line_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    focal_source: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CandidateRecord {
    test_id: String,
    covered_units: Vec<usize>,
    valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    status: Option<Status>,
}

/// Parsed contents of one coverage-matrix file.
#[derive(Debug, Clone)]
pub struct MatrixFile {
    pub task_id: Option<String>,
    pub focal_source: Option<String>,
    pub pool: CandidatePool,
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_matrix(BufReader::new(file), path)
}

/// Parses matrix JSONL. `origin` only labels diagnostics.
pub fn parse_matrix<R: BufRead>(reader: R, origin: &Path) -> Result<MatrixFile> {
    let perr = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };

    let mut header: Option<(Arc<CoverageUniverse>, Option<String>, Option<String>)> = None;
    let mut candidates = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", origin.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| perr(lineno, format!("invalid JSON: {e}")))?;

        let Some((universe, _, _)) = &header else {
            if value.get("universe").is_none() {
                return Err(perr(
                    lineno,
                    "missing header record: the first record must carry `universe`".into(),
                ));
            }
            let rec: HeaderRecord = serde_json::from_value(value)
                .map_err(|e| perr(lineno, format!("malformed header: {e}")))?;
            let universe = CoverageUniverse::from_header(UniverseHeader {
                universe: rec.universe,
                line_count: rec.line_count,
            })
            .map_err(|e| perr(lineno, e.to_string()))?;
            header = Some((Arc::new(universe), rec.task_id, rec.focal_source));
            continue;
        };

        let rec: CandidateRecord = serde_json::from_value(value)
            .map_err(|e| perr(lineno, format!("malformed candidate record: {e}")))?;
        if let Some(bad) = rec.covered_units.iter().find(|&&u| u >= universe.len()) {
            return Err(perr(
                lineno,
                format!(
                    "test `{}` references unit id {bad}, universe has {} units",
                    rec.test_id,
                    universe.len()
                ),
            ));
        }
        if let Some(first) = seen.insert(rec.test_id.clone(), lineno) {
            return Err(perr(
                lineno,
                format!("duplicate test_id `{}` (first defined on line {first})", rec.test_id),
            ));
        }
        let coverage = universe.vector(rec.covered_units)?;
        candidates.push(TestCandidate {
            id: rec.test_id,
            coverage,
            valid: rec.valid,
            source: rec.source,
            status: rec.status,
        });
    }

    let (universe, task_id, focal_source) =
        header.ok_or_else(|| perr(1, "missing header record".into()))?;
    Ok(MatrixFile {
        task_id,
        focal_source,
        pool: CandidatePool::new(universe, candidates)?,
    })
}

/// Writes a pool in matrix JSONL form.
pub fn write_matrix<W: Write>(
    mut out: W,
    pool: &CandidatePool,
    task_id: Option<&str>,
    focal_source: Option<&str>,
) -> Result<()> {
    let header = HeaderRecord {
        universe: pool.universe().units().to_vec(),
        line_count: pool.universe().line_count(),
        task_id: task_id.map(str::to_owned),
        focal_source: focal_source.map(str::to_owned),
    };
    let io = |e| Error::io("writing coverage matrix", e);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n").map_err(io)?;
    for c in pool.candidates() {
        let rec = CandidateRecord {
            test_id: c.id.clone(),
            covered_units: c.coverage.to_ids(),
            valid: c.valid,
            source: c.source.clone(),
            status: c.status,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(io)?;
    }
    Ok(())
}
