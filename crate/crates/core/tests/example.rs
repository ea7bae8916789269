mod common;

use std::collections::BTreeSet;

use common::sc_info;
use stepcov_core::annotate::{marked_lines, project_uncovered, AnnotationConfig};
use stepcov_core::reward::{build_reward_group, emit_training_records, read_training_records, write_training_records};
use stepcov_core::{
    greedy_select, initial_state, marginal_gain, transition, union_covered, utility, Exact, ExecutionOutcome,
    Status, UtilityConfig,
};

#[test]
fn redundant_test_has_zero_gain() {
    let u = sc_info::universe();
    let [a, b, c] = sc_info::tests(&u);
    let ab = union_covered(&u, [&a.coverage, &b.coverage]).unwrap();
    let unit = UtilityConfig::<Exact>::default();
    assert_eq!(marginal_gain(&u, &ab, &c.coverage, &unit).unwrap(), Exact::from_integer(0));
    assert_eq!(utility(&u, &ab, &unit).unwrap(), Exact::from_integer(12));

    let only_a = union_covered(&u, [&a.coverage]).unwrap();
    assert_eq!(marginal_gain(&u, &only_a, &c.coverage, &unit).unwrap(), Exact::from_integer(2));
    let lines = UtilityConfig::<Exact>::lines_only();
    assert_eq!(marginal_gain(&u, &only_a, &c.coverage, &lines).unwrap(), Exact::from_integer(1));
}

#[test]
fn greedy_order_on_example() {
    let u = sc_info::universe();
    let pool = stepcov_core::CandidatePool::new(u.clone(), sc_info::tests(&u).to_vec()).unwrap();
    let sel = greedy_select(&pool, 3, &UtilityConfig::<f64>::default()).unwrap();
    assert_eq!(sel.chosen, ["C", "A", "B"]);
    assert_eq!(sel.gains, [10.0, 1.0, 1.0]);
    let lines = greedy_select(&pool, 3, &UtilityConfig::<f64>::lines_only()).unwrap();
    assert_eq!(lines.chosen, ["C"]);
}

#[test]
fn reward_group_after_first_test() {
    let u = sc_info::universe();
    let [a, b, c] = sc_info::tests(&u);
    let cfg = UtilityConfig::<f64>::default();
    let state = transition(&initial_state(u.clone()), &a, &cfg).unwrap().state_after;
    assert_eq!(state.covered_line_count(), 5);

    let outcome = |t: &stepcov_core::TestCandidate| t.outcome(&u).unwrap();
    let mut broken = outcome(&c);
    broken.status = Status::Fail;
    let mut no_assert = outcome(&b);
    no_assert.has_assertion = false;
    let actions = vec![
        (sc_info::TEST_C.to_owned(), outcome(&c)),
        (sc_info::TEST_B.to_owned(), outcome(&b)),
        (sc_info::TEST_A.to_owned(), outcome(&a)),
        ("broken".to_owned(), broken),
        ("no assert".to_owned(), no_assert),
        ("syntax".to_owned(), ExecutionOutcome::failed("s", Status::SyntaxError)),
    ];
    let group = build_reward_group::<f64>(&state, actions).unwrap();
    assert_eq!(group.rewards(), [1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let mean = 2.0 / 6.0;
    for (adv, r) in group.advantages.iter().zip(group.rewards()) {
        assert!((adv - (r - mean)).abs() < 1e-12);
    }

    let text = project_uncovered(sc_info::SOURCE, &sc_info::LINES.into(), &sc_info::A_LINES.into(), &AnnotationConfig::default()).unwrap();
    let records = emit_training_records("correct_sc_info", &group, &text, 7);
    let mut buf = Vec::new();
    write_training_records(&mut buf, &records).unwrap();
    let back = read_training_records::<f64, _>(buf.as_slice()).unwrap();
    assert_eq!(back, records);
    assert!(back.iter().all(|r| r.group_size == 6 && r.universe_digest == u.digest()));
}

#[test]
fn annotation_marks_only_line_ten() {
    let cfg = AnnotationConfig::default();
    let exec: BTreeSet<usize> = sc_info::LINES.into();
    let text = project_uncovered(sc_info::SOURCE, &exec, &sc_info::A_LINES.into(), &cfg).unwrap();
    assert_eq!(marked_lines(&text, &cfg), BTreeSet::from([10]));
    assert!(text.contains("            sc['bench'] = sc['phy'] * 100 #uncovered\n"));
    assert!(text.contains("            sc['log'] = sc['phy']\n"));

    let both: BTreeSet<usize> = sc_info::A_LINES.iter().chain(&sc_info::B_LINES).copied().collect();
    let text = project_uncovered(sc_info::SOURCE, &exec, &both, &cfg).unwrap();
    assert_eq!(text, sc_info::SOURCE);
}
