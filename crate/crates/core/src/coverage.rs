//! Coverage universes, per-test coverage vectors and the set utility over them.
//!
//! A universe is the finite set of checkable units (lines and branch arcs) of
//! one program under test. A [`CoverageVector`] is a fixed-width bitset over
//! the unit ids of exactly one universe. The utility of a suite is the
//! weighted size of the union of its tests' vectors, which is monotone and
//! submodular; the greedy optimizer relies on both properties.

use std::collections::HashMap;
use std::fmt;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Line,
    Branch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageUnit {
    pub id: usize,
    pub kind: UnitKind,
    pub label: String,
}

impl CoverageUnit {
    pub fn new(id: usize, kind: UnitKind, label: impl Into<String>) -> Self {
        CoverageUnit {
            id,
            kind,
            label: label.into(),
        }
    }
}

/// Header record of the coverage-matrix format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseHeader {
    pub universe: Vec<CoverageUnit>,
    pub line_count: usize,
}

/// The finite, immutable set of checkable units of one program.
#[derive(Clone)]
pub struct CoverageUniverse {
    units: Vec<CoverageUnit>,
    line_count: usize,
    line_mask: FixedBitSet,
    digest: String,
    fingerprint: u64,
    by_line: HashMap<usize, usize>,
    by_arc: HashMap<String, usize>,
}

impl fmt::Debug for CoverageUniverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoverageUniverse")
            .field("units", &self.units.len())
            .field("line_count", &self.line_count)
            .field("digest", &&self.digest[..12])
            .finish()
    }
}

impl PartialEq for CoverageUniverse {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest
    }
}

impl Eq for CoverageUniverse {}

/// Source line number encoded in a unit label: either the whole label or the
/// segment after its last `:` (`"focal.py:12"`).
fn label_line(label: &str) -> Option<usize> {
    let tail = label.rsplit(':').next().unwrap_or(label);
    tail.trim().parse().ok()
}

fn label_tail(label: &str) -> &str {
    match label.rfind(':') {
        Some(pos) => &label[pos + 1..],
        None => label,
    }
}

impl CoverageUniverse {
    /// Builds a universe. Units may arrive in any order but their ids must be
    /// exactly `0..units.len()` and labels must be unique.
    pub fn new(mut units: Vec<CoverageUnit>) -> Result<Self> {
        units.sort_by_key(|u| u.id);
        for (expected, unit) in units.iter().enumerate() {
            if unit.id != expected {
                return Err(Error::InvalidUniverse(format!(
                    "unit ids must be dense 0..{}; found id {} at position {expected}",
                    units.len(),
                    unit.id
                )));
            }
        }
        let mut seen = HashMap::with_capacity(units.len());
        for unit in &units {
            if let Some(prev) = seen.insert(unit.label.as_str(), unit.id) {
                return Err(Error::InvalidUniverse(format!(
                    "label `{}` used by units {prev} and {}",
                    unit.label, unit.id
                )));
            }
        }

        let mut line_mask = FixedBitSet::with_capacity(units.len());
        let mut by_line = HashMap::new();
        let mut by_arc = HashMap::new();
        for unit in &units {
            match unit.kind {
                UnitKind::Line => {
                    line_mask.insert(unit.id);
                    if let Some(n) = label_line(&unit.label) {
                        by_line.entry(n).or_insert(unit.id);
                    }
                }
                UnitKind::Branch => {
                    by_arc
                        .entry(label_tail(&unit.label).to_owned())
                        .or_insert(unit.id);
                }
            }
        }
        let line_count = line_mask.count_ones(..);

        let mut hasher = Sha256::new();
        for unit in &units {
            let kind = match unit.kind {
                UnitKind::Line => "line",
                UnitKind::Branch => "branch",
            };
            hasher.update(format!("{}\t{}\t{}\n", unit.id, kind, unit.label).as_bytes());
        }
        let digest_bytes = hasher.finalize();
        let mut fp = [0u8; 8];
        fp.copy_from_slice(&digest_bytes[..8]);

        Ok(CoverageUniverse {
            units,
            line_count,
            line_mask,
            digest: hex::encode(digest_bytes),
            fingerprint: u64::from_le_bytes(fp),
            by_line,
            by_arc,
        })
    }

    /// A line-only universe whose unit `i` is source line `i + 1`.
    pub fn line_only(n: usize) -> Self {
        let units = (0..n)
            .map(|i| CoverageUnit::new(i, UnitKind::Line, (i + 1).to_string()))
            .collect();
        Self::new(units).expect("line-only universe is well formed")
    }

    /// Builds and checks a universe from the coverage-matrix header record.
    pub fn from_header(header: UniverseHeader) -> Result<Self> {
        let declared = header.line_count;
        let universe = Self::new(header.universe)?;
        if universe.line_count != declared {
            return Err(Error::InvalidUniverse(format!(
                "header declares line_count {declared} but universe has {} line units",
                universe.line_count
            )));
        }
        Ok(universe)
    }

    pub fn header(&self) -> UniverseHeader {
        UniverseHeader {
            universe: self.units.clone(),
            line_count: self.line_count,
        }
    }

    pub fn units(&self) -> &[CoverageUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Number of line units (`L_A` for the reward).
    pub fn line_count(&self) -> usize {
        self.line_count
    }

    pub fn branch_count(&self) -> usize {
        self.units.len() - self.line_count
    }

    /// Hex SHA-256 over the canonical unit listing.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn kind(&self, id: usize) -> Option<UnitKind> {
        self.units.get(id).map(|u| u.kind)
    }

    /// Source line number of a line unit, when its label encodes one.
    pub fn line_number(&self, id: usize) -> Option<usize> {
        self.units
            .get(id)
            .filter(|u| u.kind == UnitKind::Line)
            .and_then(|u| label_line(&u.label))
    }

    /// Unit id of the line unit for source line `line`.
    pub fn unit_for_line(&self, line: usize) -> Option<usize> {
        self.by_line.get(&line).copied()
    }

    /// Unit id of the branch unit for arc label `"from->to"`.
    pub fn unit_for_arc(&self, arc: &str) -> Option<usize> {
        self.by_arc.get(label_tail(arc)).copied()
    }

    /// Source line numbers of all line units that encode one.
    pub fn executable_lines(&self) -> Vec<usize> {
        let mut lines: Vec<usize> = self.by_line.keys().copied().collect();
        lines.sort_unstable();
        lines
    }

    /// Source line numbers of the line units set in `vector`.
    pub fn covered_lines(&self, vector: &CoverageVector) -> Vec<usize> {
        let mut lines: Vec<usize> = vector
            .bits
            .ones()
            .filter_map(|id| self.line_number(id))
            .collect();
        lines.sort_unstable();
        lines.dedup();
        lines
    }

    pub fn empty_vector(&self) -> CoverageVector {
        CoverageVector {
            universe: self.fingerprint,
            bits: FixedBitSet::with_capacity(self.units.len()),
        }
    }

    /// Builds a vector from unit ids, rejecting ids outside the universe.
    pub fn vector<I>(&self, ids: I) -> Result<CoverageVector>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut v = self.empty_vector();
        for id in ids {
            if id >= self.units.len() {
                return Err(Error::InvalidInput(format!(
                    "unit id {id} outside universe of {} units",
                    self.units.len()
                )));
            }
            v.bits.insert(id);
        }
        Ok(v)
    }

    pub fn full_vector(&self) -> CoverageVector {
        let mut v = self.empty_vector();
        v.bits.insert_range(..);
        v
    }

    pub fn check(&self, vector: &CoverageVector) -> Result<()> {
        if vector.universe != self.fingerprint || vector.bits.len() != self.units.len() {
            return Err(Error::UniverseMismatch {
                expected: format!("{:016x}/{}", self.fingerprint, self.units.len()),
                found: format!("{:016x}/{}", vector.universe, vector.bits.len()),
            });
        }
        Ok(())
    }

    /// `(line units, branch units)` set in `vector`.
    pub fn kind_counts(&self, vector: &CoverageVector) -> Result<(usize, usize)> {
        self.check(vector)?;
        let lines = vector.bits.intersection_count(&self.line_mask);
        Ok((lines, vector.count() - lines))
    }

    /// `(line units, branch units)` set in `candidate` but not in `current`.
    pub fn gain_counts(
        &self,
        current: &CoverageVector,
        candidate: &CoverageVector,
    ) -> Result<(usize, usize)> {
        self.check(current)?;
        self.check(candidate)?;
        let mut lines = 0usize;
        let mut total = 0usize;
        for ((c, cur), mask) in candidate
            .bits
            .as_slice()
            .iter()
            .zip(current.bits.as_slice())
            .zip(self.line_mask.as_slice())
        {
            let fresh = c & !cur;
            total += fresh.count_ones() as usize;
            lines += (fresh & mask).count_ones() as usize;
        }
        Ok((lines, total - lines))
    }
}

/// Membership bitset over the unit ids of one universe.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CoverageVector {
    universe: u64,
    bits: FixedBitSet,
}

impl fmt::Debug for CoverageVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.bits.ones()).finish()
    }
}

impl CoverageVector {
    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn is_clear(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.bits.contains(id)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    pub fn to_ids(&self) -> Vec<usize> {
        self.bits.ones().collect()
    }

    pub fn same_universe(&self, other: &CoverageVector) -> bool {
        self.universe == other.universe && self.bits.len() == other.bits.len()
    }

    fn ensure_same(&self, other: &CoverageVector) -> Result<()> {
        if self.same_universe(other) {
            Ok(())
        } else {
            Err(Error::UniverseMismatch {
                expected: format!("{:016x}/{}", self.universe, self.bits.len()),
                found: format!("{:016x}/{}", other.universe, other.bits.len()),
            })
        }
    }

    pub fn union_with(&mut self, other: &CoverageVector) -> Result<()> {
        self.ensure_same(other)?;
        self.bits.union_with(&other.bits);
        Ok(())
    }

    pub fn union(&self, other: &CoverageVector) -> Result<CoverageVector> {
        let mut out = self.clone();
        out.union_with(other)?;
        Ok(out)
    }

    pub fn is_subset(&self, other: &CoverageVector) -> Result<bool> {
        self.ensure_same(other)?;
        Ok(self.bits.is_subset(&other.bits))
    }
}

/// Per-kind weights of the utility. Unit weights give plain cardinality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityConfig<T> {
    pub weight_line: T,
    pub weight_branch: T,
}

impl<T: Scalar> Default for UtilityConfig<T> {
    fn default() -> Self {
        UtilityConfig {
            weight_line: T::one(),
            weight_branch: T::one(),
        }
    }
}

impl<T: Scalar> UtilityConfig<T> {
    pub fn new(weight_line: T, weight_branch: T) -> Result<Self> {
        let cfg = UtilityConfig {
            weight_line,
            weight_branch,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Counts lines only; the configuration used for rewards.
    pub fn lines_only() -> Self {
        UtilityConfig {
            weight_line: T::one(),
            weight_branch: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(self.weight_line >= zero && self.weight_branch >= zero) {
            return Err(Error::InvalidConfig(format!(
                "weights must be non-negative, got line={} branch={}",
                self.weight_line, self.weight_branch
            )));
        }
        if !(self.weight_line > zero || self.weight_branch > zero) {
            return Err(Error::InvalidConfig(
                "at least one weight must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    fn is_unit(&self) -> bool {
        self.weight_line == T::one() && self.weight_branch == T::one()
    }

    /// Weighted value of `lines` line units and `branches` branch units.
    pub fn weigh(&self, lines: usize, branches: usize) -> T {
        if self.is_unit() {
            T::from_count(lines + branches)
        } else {
            self.weight_line * T::from_count(lines) + self.weight_branch * T::from_count(branches)
        }
    }

    /// Parses `line=1,branch=0.5`. Missing keys keep their default of 1.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("expected key=value in weights, got `{part}`"))
            })?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::InvalidConfig(format!("weight `{value}` is not a number"))
            })?;
            let value = T::from_f64(value)
                .ok_or_else(|| Error::InvalidConfig(format!("weight {value} not representable")))?;
            match key.trim() {
                "line" => cfg.weight_line = value,
                "branch" => cfg.weight_branch = value,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown weight key `{other}` (expected line or branch)"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `F(S)`: weighted count of the units set in `covered`.
pub fn utility<T: Scalar>(
    universe: &CoverageUniverse,
    covered: &CoverageVector,
    cfg: &UtilityConfig<T>,
) -> Result<T> {
    let (lines, branches) = universe.kind_counts(covered)?;
    Ok(cfg.weigh(lines, branches))
}

/// `F(current ∪ candidate) − F(current)`, computed as the weighted count of
/// `candidate \ current`.
pub fn marginal_gain<T: Scalar>(
    universe: &CoverageUniverse,
    current: &CoverageVector,
    candidate: &CoverageVector,
    cfg: &UtilityConfig<T>,
) -> Result<T> {
    let (lines, branches) = universe.gain_counts(current, candidate)?;
    Ok(cfg.weigh(lines, branches))
}

/// Bitwise union of `vectors`; the empty list yields the all-zero vector.
pub fn union_covered<'a, I>(universe: &CoverageUniverse, vectors: I) -> Result<CoverageVector>
where
    I: IntoIterator<Item = &'a CoverageVector>,
{
    let mut out = universe.empty_vector();
    for v in vectors {
        universe.check(v)?;
        out.bits.union_with(&v.bits);
    }
    Ok(out)
}
