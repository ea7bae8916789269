#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepcov_core::{CandidatePool, CoverageUnit, CoverageUniverse, TaskBundle, TestCandidate, UnitKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random pool: `n` candidates over a line-only universe of `units` units,
/// each unit covered independently with probability `density`.
pub fn random_pool(rng: &mut ChaCha8Rng, units: usize, n: usize, density: f64) -> CandidatePool {
    let u = Arc::new(CoverageUniverse::line_only(units));
    let cands = (0..n)
        .map(|i| {
            let ids: Vec<usize> = (0..units).filter(|_| rng.gen_bool(density)).collect();
            TestCandidate::new(format!("t{i:03}"), u.vector(ids).unwrap(), true)
        })
        .collect();
    CandidatePool::new(u, cands).unwrap()
}

/// Random pool over a mixed line/branch universe with some invalid tests and
/// heavy overlap, so ties and stale bounds are common.
pub fn random_mixed_pool(rng: &mut ChaCha8Rng) -> CandidatePool {
    let lines = rng.gen_range(1..20);
    let branches = rng.gen_range(0..10);
    let units: Vec<CoverageUnit> = (0..lines)
        .map(|i| CoverageUnit::new(i, UnitKind::Line, format!("f.py:{}", i + 1)))
        .chain((0..branches).map(|j| {
            CoverageUnit::new(lines + j, UnitKind::Branch, format!("f.py:{}->{}", j + 1, j + 2))
        }))
        .collect();
    let u = Arc::new(CoverageUniverse::new(units).unwrap());
    let n = rng.gen_range(1..40);
    let density = rng.gen_range(0.05..0.6);
    let mut names: Vec<String> = (0..n).map(|i| format!("c{}", rng.gen_range(0..1000) * 100 + i)).collect();
    names.sort();
    names.dedup();
    let cands = names
        .into_iter()
        .map(|name| {
            let ids: Vec<usize> = (0..u.len()).filter(|_| rng.gen_bool(density)).collect();
            TestCandidate::new(name, u.vector(ids).unwrap(), rng.gen_bool(0.85))
        })
        .collect();
    CandidatePool::new(u, cands).unwrap()
}

/// The motivating example: `correct_sc_info` and its three tests.
pub mod sc_info {
    use super::*;

    pub const SOURCE: &str = "def correct_sc_info(sc_info):
    for sc in sc_info:
        # [Block 1] CPU Correction
        if sc['phy'] > 4 and sc['log']==0:
            sc['log'] = sc['phy']

        # [Block 2] Benchmark Calculation
        if 'bench' not in sc:
            # Mock calc for illustration
            sc['bench'] = sc['phy'] * 100
";

    pub const TEST_A: &str = "def test_cpu_correction():
    data = [{'phy': 8, 'log': 0, 'bench': 800}]
    correct_sc_info(data)
    assert data[0]['log'] == 8
";
    pub const TEST_B: &str = "def test_bench_calc():
    data = [{'phy': 4, 'log': 4}]
    correct_sc_info(data)
    assert data[0]['bench']== 400
";
    pub const TEST_C: &str = "def test_full_flow():
    data = [{'phy': 8, 'log': 0}]
    correct_sc_info(data)
    assert data[0]['log'] == 8
    assert data[0]['bench'] == 800
";

    /// Executable lines of `SOURCE` and the branch arcs out of its three
    /// decision lines (`-1` is function exit).
    pub const LINES: [usize; 6] = [1, 2, 4, 5, 8, 10];
    pub const ARCS: [&str; 6] = ["2->4", "2->-1", "4->5", "4->8", "8->10", "8->2"];

    /// Traced by hand from the inputs: A skips line 10 (`bench` present),
    /// B skips line 5 (`phy` is not > 4), C executes both blocks.
    pub const A_LINES: [usize; 5] = [1, 2, 4, 5, 8];
    pub const A_ARCS: [&str; 4] = ["2->4", "2->-1", "4->5", "8->2"];
    pub const B_LINES: [usize; 5] = [1, 2, 4, 8, 10];
    pub const B_ARCS: [&str; 4] = ["2->4", "2->-1", "4->8", "8->10"];
    pub const C_LINES: [usize; 6] = [1, 2, 4, 5, 8, 10];
    pub const C_ARCS: [&str; 4] = ["2->4", "2->-1", "4->5", "8->10"];

    pub fn universe() -> Arc<CoverageUniverse> {
        let units = LINES
            .iter()
            .map(|l| (UnitKind::Line, format!("correct_sc_info.py:{l}")))
            .chain(ARCS.iter().map(|a| (UnitKind::Branch, format!("correct_sc_info.py:{a}"))))
            .enumerate()
            .map(|(id, (kind, label))| CoverageUnit::new(id, kind, label))
            .collect();
        Arc::new(CoverageUniverse::new(units).unwrap())
    }

    pub fn candidate(u: &CoverageUniverse, id: &str, lines: &[usize], arcs: &[&str], source: &str) -> TestCandidate {
        let ids = lines
            .iter()
            .map(|&l| u.unit_for_line(l).unwrap())
            .chain(arcs.iter().map(|a| u.unit_for_arc(a).unwrap()));
        TestCandidate::new(id, u.vector(ids).unwrap(), true).with_source(source)
    }

    pub fn tests(u: &CoverageUniverse) -> [TestCandidate; 3] {
        [
            candidate(u, "A", &A_LINES, &A_ARCS, TEST_A),
            candidate(u, "B", &B_LINES, &B_ARCS, TEST_B),
            candidate(u, "C", &C_LINES, &C_ARCS, TEST_C),
        ]
    }
}

/// Three tests over six lines where greedy picks T1 then T2 but the best
/// pair is {T2, T3}.
pub fn three_tests() -> TaskBundle {
    let u = Arc::new(CoverageUniverse::line_only(6));
    let v = |lines: &[usize]| u.vector(lines.iter().map(|l| l - 1)).unwrap();
    let pool = CandidatePool::new(
        u.clone(),
        vec![
            TestCandidate::new("T1", v(&[1, 2, 3, 4]), true).with_source("def test_1(): assert f(1)"),
            TestCandidate::new("T2", v(&[1, 2, 5]), true).with_source("def test_2(): assert f(2)"),
            TestCandidate::new("T3", v(&[3, 4, 6]), true).with_source("def test_3(): assert f(3)"),
        ],
    )
    .unwrap();
    TaskBundle::new("three", numbered_source(6), pool).unwrap()
}

pub fn numbered_source(lines: usize) -> String {
    (1..=lines).map(|i| format!("x{i} = {i}\n")).collect()
}

/// Task whose greedy order has exactly `steps` valid tests and whose full
/// pool covers `covered` of `lines` lines. Test `i` covers the lines
/// `j < covered` with `j % steps == i`; an extra invalid test covers all.
pub fn synthetic_task(id: &str, lines: usize, steps: usize, covered: usize) -> TaskBundle {
    assert!(steps >= 1 && covered >= steps && covered <= lines);
    let u = Arc::new(CoverageUniverse::line_only(lines));
    let mut cands: Vec<TestCandidate> = (0..steps)
        .map(|i| {
            let ids = (0..covered).filter(|j| j % steps == i);
            TestCandidate::new(format!("{id}-t{i:02}"), u.vector(ids).unwrap(), true)
        })
        .collect();
    cands.push(TestCandidate::new(format!("{id}-broken"), u.full_vector(), false));
    TaskBundle::new(id, numbered_source(lines), CandidatePool::new(u, cands).unwrap()).unwrap()
}
