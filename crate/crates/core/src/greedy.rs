//! Cardinality-constrained greedy selection over a candidate pool.
//!
//! [`greedy_select`] scans every remaining candidate at every step.
//! [`lazy_greedy_select`] keeps stale gains as upper bounds in a max-heap and
//! only re-evaluates what could still win; by submodularity a stale gain is
//! never below the current one, so both produce identical results.
//! [`brute_force_optimal`] is the exhaustive oracle used to check the
//! `1 - 1/e` guarantee.
//!
//! Ties are broken to the lexicographically smallest candidate id. Two gains
//! tie when they differ by at most [`Scalar::tolerance`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::coverage::{marginal_gain, utility, CoverageUniverse, CoverageVector, UtilityConfig};
use crate::error::{Error, Result};
use crate::pool::{CandidatePool, TestCandidate};
use crate::scalar::Scalar;

/// Largest `C(n, K)` the exhaustive oracle accepts.
pub const BRUTE_FORCE_LIMIT: u64 = 2_000_000;

/// Identifies the inputs a result was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance<T> {
    pub pool_digest: String,
    pub budget: usize,
    pub weights: UtilityConfig<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult<T> {
    pub chosen: Vec<String>,
    pub gains: Vec<T>,
    pub final_utility: T,
    pub budget: usize,
    pub provenance: Provenance<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalResult<T> {
    /// Sorted ids of a maximizing subset.
    pub ids: Vec<String>,
    pub utility: T,
    pub provenance: Provenance<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub greedy_utility: f64,
    pub optimal_utility: f64,
    pub ratio: f64,
    pub bound: f64,
    pub bound_holds: bool,
}

/// `1 - 1/e`.
pub fn approximation_bound() -> f64 {
    1.0 - (-1.0f64).exp()
}

fn check_budget(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidInput("budget K must be at least 1".into()));
    }
    Ok(())
}

fn provenance<T: Scalar>(pool: &CandidatePool, k: usize, cfg: &UtilityConfig<T>) -> Provenance<T> {
    Provenance {
        pool_digest: pool.digest(),
        budget: k,
        weights: *cfg,
    }
}

fn finish<T: Scalar>(
    pool: &CandidatePool,
    k: usize,
    cfg: &UtilityConfig<T>,
    chosen: &[&TestCandidate],
    gains: Vec<T>,
) -> Result<SelectionResult<T>> {
    let universe = pool.universe();
    let covered = crate::coverage::union_covered(universe, chosen.iter().map(|c| &c.coverage))?;
    Ok(SelectionResult {
        chosen: chosen.iter().map(|c| c.id.clone()).collect(),
        gains,
        final_utility: utility(universe, &covered, cfg)?,
        budget: k,
        provenance: provenance(pool, k, cfg),
    })
}

/// Maximum-gain candidate among `candidates`, which must be in id order.
/// Among gains within tolerance of the maximum the first (smallest id) wins.
/// Returns the caller's key with its gain.
pub fn best_candidate<'a, K, T, I>(
    universe: &CoverageUniverse,
    current: &CoverageVector,
    candidates: I,
    cfg: &UtilityConfig<T>,
) -> Result<Option<(K, T)>>
where
    T: Scalar,
    I: IntoIterator<Item = (K, &'a TestCandidate)>,
{
    let mut scored = Vec::new();
    for (key, c) in candidates {
        scored.push((key, marginal_gain(universe, current, &c.coverage, cfg)?));
    }
    let Some(best) = scored
        .iter()
        .map(|(_, g)| *g)
        .reduce(|a, b| if b > a { b } else { a })
    else {
        return Ok(None);
    };
    Ok(scored.into_iter().find(|(_, g)| *g >= best - T::tolerance()))
}

/// Naive step-wise greedy. Invalid candidates are dropped up front; the loop
/// stops at `k` picks, when candidates run out, or when the best gain is zero.
pub fn greedy_select<T: Scalar>(
    pool: &CandidatePool,
    k: usize,
    cfg: &UtilityConfig<T>,
) -> Result<SelectionResult<T>> {
    check_budget(k)?;
    cfg.validate()?;
    let universe = pool.universe();
    let candidates = pool.valid_sorted();
    let mut taken = vec![false; candidates.len()];
    let mut current = universe.empty_vector();
    let mut chosen = Vec::new();
    let mut gains = Vec::new();

    while chosen.len() < k {
        let remaining = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(i, c)| (i, *c));
        let Some((winner, gain)) = best_candidate(universe, &current, remaining, cfg)? else {
            break;
        };
        if gain <= T::tolerance() {
            break;
        }
        taken[winner] = true;
        current.union_with(&candidates[winner].coverage)?;
        chosen.push(candidates[winner]);
        gains.push(gain);
    }
    finish(pool, k, cfg, &chosen, gains)
}

struct HeapEntry<T> {
    bound: T,
    index: usize,
    fresh_at: usize,
}

impl<T: PartialOrd> PartialEq for HeapEntry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: PartialOrd> Eq for HeapEntry<T> {}

impl<T: PartialOrd> PartialOrd for HeapEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: PartialOrd> Ord for HeapEntry<T> {
    // Max-heap on bound; among equal bounds the smaller index pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .partial_cmp(&other.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Lazy greedy with the same contract as [`greedy_select`].
pub fn lazy_greedy_select<T: Scalar>(
    pool: &CandidatePool,
    k: usize,
    cfg: &UtilityConfig<T>,
) -> Result<SelectionResult<T>> {
    check_budget(k)?;
    cfg.validate()?;
    let universe = pool.universe();
    let candidates = pool.valid_sorted();
    let mut current = universe.empty_vector();
    let mut heap = BinaryHeap::with_capacity(candidates.len());
    for (index, c) in candidates.iter().enumerate() {
        heap.push(HeapEntry {
            bound: marginal_gain(universe, &current, &c.coverage, cfg)?,
            index,
            fresh_at: 0,
        });
    }

    let mut chosen = Vec::new();
    let mut gains = Vec::new();
    let tol = T::tolerance();

    while chosen.len() < k {
        let step = chosen.len();
        // Refresh until the top is current; its gain is then the maximum.
        let best = loop {
            let Some(top) = heap.peek() else { break None };
            if top.fresh_at == step {
                break Some(top.bound);
            }
            let mut e = heap.pop().expect("peeked");
            e.bound = marginal_gain(universe, &current, &candidates[e.index].coverage, cfg)?;
            e.fresh_at = step;
            heap.push(e);
        };
        let Some(best) = best else { break };
        if best <= tol {
            break;
        }

        // Every candidate whose bound is within tolerance of the maximum may
        // tie; refresh them all and keep the smallest id.
        let mut ties: Vec<HeapEntry<T>> = Vec::new();
        while heap.peek().is_some_and(|e| e.bound >= best - tol) {
            let mut e = heap.pop().expect("peeked");
            if e.fresh_at != step {
                e.bound = marginal_gain(universe, &current, &candidates[e.index].coverage, cfg)?;
                e.fresh_at = step;
                if e.bound < best - tol {
                    heap.push(e);
                    continue;
                }
            }
            ties.push(e);
        }
        let pos = ties
            .iter()
            .position_min_by_key(|e| e.index)
            .expect("the refreshed maximum is a tie candidate");
        let winner = ties.swap_remove(pos);
        heap.extend(ties);

        current.union_with(&candidates[winner.index].coverage)?;
        chosen.push(candidates[winner.index]);
        gains.push(winner.bound);
    }
    finish(pool, k, cfg, &chosen, gains)
}

/// `C(n, k)` without overflow for the sizes we guard.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exhaustive maximum over subsets of the valid candidates of size at most
/// `k`. Utility is monotone, so only subsets of size `min(k, n)` are
/// enumerated; ties go to the lexicographically smallest sorted id list.
pub fn brute_force_optimal<T: Scalar>(
    pool: &CandidatePool,
    k: usize,
    cfg: &UtilityConfig<T>,
) -> Result<OptimalResult<T>> {
    check_budget(k)?;
    cfg.validate()?;
    let universe = pool.universe();
    let candidates = pool.valid_sorted();
    let n = candidates.len();
    let combinations = binomial(n, k);
    if combinations > BRUTE_FORCE_LIMIT as u128 {
        return Err(Error::InstanceTooLarge {
            n,
            k,
            combinations,
            bound: BRUTE_FORCE_LIMIT,
        });
    }

    let size = k.min(n);
    let mut best: Option<(Vec<usize>, T)> = None;
    // `combinations` yields index sets in lexicographic order, and indices
    // follow id order, so the first maximum found is the smallest id set.
    for subset in (0..n).combinations(size) {
        let covered = crate::coverage::union_covered(
            universe,
            subset.iter().map(|&i| &candidates[i].coverage),
        )?;
        let value = utility(universe, &covered, cfg)?;
        let better = match &best {
            None => true,
            Some((_, v)) => value > *v + T::tolerance(),
        };
        if better {
            best = Some((subset, value));
        }
    }

    let (subset, value) = best.unwrap_or((Vec::new(), T::zero()));
    Ok(OptimalResult {
        ids: subset.iter().map(|&i| candidates[i].id.clone()).collect(),
        utility: value,
        provenance: provenance(pool, k, cfg),
    })
}

/// Ratio of greedy to optimal utility; `1.0` when the optimum is zero.
pub fn verify_ratio<T: Scalar>(
    greedy: &SelectionResult<T>,
    optimal: &OptimalResult<T>,
) -> Result<RatioReport> {
    if greedy.provenance != optimal.provenance {
        return Err(Error::ProvenanceMismatch(format!(
            "greedy computed on pool {} (K={}), optimum on pool {} (K={})",
            &greedy.provenance.pool_digest[..12],
            greedy.provenance.budget,
            &optimal.provenance.pool_digest[..12],
            optimal.provenance.budget,
        )));
    }
    let greedy_utility = greedy.final_utility.as_f64();
    let optimal_utility = optimal.utility.as_f64();
    let ratio = if optimal.utility <= T::tolerance() {
        1.0
    } else {
        greedy_utility / optimal_utility
    };
    let bound = approximation_bound();
    Ok(RatioReport {
        greedy_utility,
        optimal_utility,
        ratio,
        bound,
        bound_holds: ratio >= bound - 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use num_rational::Ratio;

    use super::*;
    use crate::coverage::CoverageUniverse;

    /// Units 1..=6 map to ids 0..=5.
    fn three_tests() -> CandidatePool {
        let u = Arc::new(CoverageUniverse::line_only(6));
        let v = |units: &[usize]| u.vector(units.iter().map(|x| x - 1)).unwrap();
        CandidatePool::new(
            u.clone(),
            vec![
                TestCandidate::new("T1", v(&[1, 2, 3, 4]), true),
                TestCandidate::new("T2", v(&[1, 2, 5]), true),
                TestCandidate::new("T3", v(&[3, 4, 6]), true),
            ],
        )
        .unwrap()
    }

    #[test]
    fn three_test_instance() {
        let pool = three_tests();
        let cfg = UtilityConfig::<f64>::default();
        let r = greedy_select(&pool, 2, &cfg).unwrap();
        assert_eq!(r.chosen, ["T1", "T2"]);
        assert_eq!(r.gains, [4.0, 1.0]);
        assert_eq!(r.final_utility, 5.0);

        let opt = brute_force_optimal(&pool, 2, &cfg).unwrap();
        assert_eq!(opt.ids, ["T2", "T3"]);
        assert_eq!(opt.utility, 6.0);

        let report = verify_ratio(&r, &opt).unwrap();
        assert!((report.ratio - 5.0 / 6.0).abs() < 1e-12);
        assert!(report.bound_holds);
    }

    #[test]
    fn exact_scalar_gives_same_choice() {
        let pool = three_tests();
        let cfg = UtilityConfig::<Ratio<i64>>::default();
        let r = greedy_select(&pool, 2, &cfg).unwrap();
        assert_eq!(r.chosen, ["T1", "T2"]);
        assert_eq!(r.final_utility, Ratio::from_integer(5));
        assert_eq!(r, lazy_greedy_select(&pool, 2, &cfg).unwrap());
    }

    #[test]
    fn single_full_candidate_stops_early() {
        let u = Arc::new(CoverageUniverse::line_only(4));
        let pool = CandidatePool::new(
            u.clone(),
            vec![
                TestCandidate::new("all", u.full_vector(), true),
                TestCandidate::new("part", u.vector([0]).unwrap(), true),
            ],
        )
        .unwrap();
        let r = greedy_select(&pool, 5, &UtilityConfig::<f64>::default()).unwrap();
        assert_eq!(r.chosen, ["all"]);
        assert_eq!(r.gains, [4.0]);
    }

    #[test]
    fn empty_coverage_and_empty_pool() {
        let u = Arc::new(CoverageUniverse::line_only(4));
        let pool = CandidatePool::new(
            u.clone(),
            vec![
                TestCandidate::new("a", u.empty_vector(), true),
                TestCandidate::new("b", u.full_vector(), false),
            ],
        )
        .unwrap();
        let cfg = UtilityConfig::<f64>::default();
        let r = greedy_select(&pool, 3, &cfg).unwrap();
        assert!(r.chosen.is_empty());
        assert_eq!(r.final_utility, 0.0);

        let nothing = CandidatePool::new(u, vec![]).unwrap();
        let r = lazy_greedy_select(&nothing, 3, &cfg).unwrap();
        assert!(r.chosen.is_empty());
        let opt = brute_force_optimal(&nothing, 3, &cfg).unwrap();
        assert!(opt.ids.is_empty());
        assert_eq!(verify_ratio(&r, &opt).unwrap().ratio, 1.0);
    }

    #[test]
    fn zero_budget_rejected() {
        let cfg = UtilityConfig::<f64>::default();
        assert!(greedy_select(&three_tests(), 0, &cfg).is_err());
        assert!(lazy_greedy_select(&three_tests(), 0, &cfg).is_err());
    }

    #[test]
    fn k_at_least_n_takes_everything() {
        let pool = three_tests();
        let opt = brute_force_optimal(&pool, 7, &UtilityConfig::<f64>::default()).unwrap();
        assert_eq!(opt.ids, ["T1", "T2", "T3"]);
        assert_eq!(opt.utility, 6.0);
    }

    #[test]
    fn lazy_matches_when_leader_decays() {
        // Step 1 picks `a`; its overlap makes `b`'s stale bound (5) larger
        // than its fresh gain (1), while `c`, never re-examined, now wins.
        let u = Arc::new(CoverageUniverse::line_only(12));
        let v = |ids: &[usize]| u.vector(ids.iter().copied()).unwrap();
        let pool = CandidatePool::new(
            u.clone(),
            vec![
                TestCandidate::new("a", v(&[0, 1, 2, 3, 4, 5]), true),
                TestCandidate::new("b", v(&[0, 1, 2, 3, 6]), true),
                TestCandidate::new("c", v(&[7, 8, 9]), true),
                TestCandidate::new("d", v(&[10]), true),
            ],
        )
        .unwrap();
        let cfg = UtilityConfig::<f64>::default();
        let naive = greedy_select(&pool, 3, &cfg).unwrap();
        assert_eq!(naive.chosen, ["a", "c", "b"]);
        assert_eq!(naive, lazy_greedy_select(&pool, 3, &cfg).unwrap());
    }

    #[test]
    fn size_guard() {
        let u = Arc::new(CoverageUniverse::line_only(1));
        let cands = (0..40)
            .map(|i| TestCandidate::new(format!("t{i:02}"), u.full_vector(), true))
            .collect();
        let pool = CandidatePool::new(u, cands).unwrap();
        // C(40, 10) = 847,660,528
        match brute_force_optimal(&pool, 10, &UtilityConfig::<f64>::default()) {
            Err(Error::InstanceTooLarge { bound, .. }) => assert_eq!(bound, BRUTE_FORCE_LIMIT),
            other => panic!("expected size guard, got {other:?}"),
        }
        assert_eq!(binomial(40, 10), 847_660_528);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn provenance_mismatch_rejected() {
        let pool = three_tests();
        let cfg = UtilityConfig::<f64>::default();
        let g = greedy_select(&pool, 2, &cfg).unwrap();
        let opt = brute_force_optimal(&pool, 3, &cfg).unwrap();
        assert!(matches!(
            verify_ratio(&g, &opt),
            Err(Error::ProvenanceMismatch(_))
        ));
    }

    #[test]
    fn ratio_conventions() {
        let pool = three_tests();
        let cfg = UtilityConfig::<f64>::default();
        let g = greedy_select(&pool, 1, &cfg).unwrap();
        let opt = brute_force_optimal(&pool, 1, &cfg).unwrap();
        let r = verify_ratio(&g, &opt).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert!((approximation_bound() - 0.632_120_558_8).abs() < 1e-9);
    }
}
