mod common;

use std::fs;

use stepcov_core::orchestrator::{
    evaluate, read_kill_matrix, read_solution_outcomes, run_pool_episode, EpisodeConfig, EvaluationInputs, Policy,
};
use stepcov_core::reward::delta_cov;
use stepcov_core::{greedy_select, union_covered, Error, TaskBundle, UtilityConfig};

#[test]
fn greedy_episode_on_three_tests() {
    let task = common::three_tests();
    let cfg = EpisodeConfig::<f64> { budget: 2, ..Default::default() };
    let ep = run_pool_episode(&task, &Policy::PoolGreedy, &cfg).unwrap();
    assert_eq!(ep.chosen(), ["T1", "T2"]);
    let fractions: Vec<f64> = ep.coverage_at_k.iter().map(|c| c.line_fraction).collect();
    assert_eq!(fractions, [4.0 / 6.0, 5.0 / 6.0]);
    let rewards: Vec<f64> = ep.steps.iter().map(|s| s.reward).collect();
    assert_eq!(rewards, [4.0 / 6.0, 1.0 / 2.0]);
    assert_eq!(ep.steps[0].test_text.as_deref(), Some("def test_1(): assert f(1)"));
    assert_eq!((ep.syntactic_rate, ep.execution_rate), (1.0, 1.0));
}

#[test]
fn greedy_episode_prefix_matches_selection() {
    for seed in 0..40u64 {
        let pool = common::random_mixed_pool(&mut common::rng(seed));
        let task = TaskBundle::new("rand", common::numbered_source(pool.universe().line_count().max(1)), pool).unwrap();
        let cfg = EpisodeConfig::<f64> { budget: 6, ..Default::default() };
        let ep = run_pool_episode(&task, &Policy::PoolGreedy, &cfg).unwrap();
        let sel = greedy_select(&task.pool, 6, &UtilityConfig::<f64>::default()).unwrap();
        assert_eq!(ep.chosen()[..sel.chosen.len()], sel.chosen.iter().map(String::as_str).collect::<Vec<_>>()[..], "seed {seed}");
        assert!(ep.steps.iter().all(|s| s.valid));

        // Rewards recomputed from the covered-line counts before and after.
        let u = task.universe();
        let mut before = 0usize;
        for (k, step) in ep.steps.iter().enumerate() {
            let prefix = ep.chosen()[..=k].iter().map(|id| &task.pool.get(id).unwrap().coverage).collect::<Vec<_>>();
            let after = u.covered_lines(&union_covered(u, prefix).unwrap()).len();
            let expected: f64 = delta_cov(u.line_count(), before, after).unwrap();
            assert!((step.reward - expected).abs() < 1e-12, "seed {seed} step {k}");
            before = after;
        }
    }
}

#[test]
fn random_policy_reproducible_across_runs() {
    let task = common::synthetic_task("r", 30, 10, 30);
    let cfg = EpisodeConfig::<f64> { budget: 6, ..Default::default() };
    let a = run_pool_episode(&task, &Policy::PoolRandom { seed: 9 }, &cfg).unwrap();
    let b = run_pool_episode(&task, &Policy::PoolRandom { seed: 9 }, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(matches!(
        run_pool_episode(&task, &Policy::PoolGreedy, &EpisodeConfig::<f64> { budget: 0, ..Default::default() }),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn evaluation_reads_kill_matrix_and_solution_files() {
    let dir = tempfile::tempdir().unwrap();
    let kills = dir.path().join("kills.jsonl");
    fs::write(
        &kills,
        concat!(
            r#"{"mutant_id":"m1","killed_by":["T1"],"task_id":"three"}"#, "\n",
            r#"{"mutant_id":"m2","killed_by":["T3"],"task_id":"three"}"#, "\n",
            "\n",
            r#"{"mutant_id":"m3","killed_by":["T2"],"task_id":"three"}"#, "\n",
        ),
    )
    .unwrap();
    let outcomes = dir.path().join("outcomes.jsonl");
    fs::write(
        &outcomes,
        concat!(
            r#"{"test_id":"T1","solution_id":"canonical","status":"pass"}"#, "\n",
            r#"{"test_id":"T2","solution_id":"canonical","status":"pass"}"#, "\n",
            r#"{"test_id":"T1","solution_id":"bug1","status":"pass"}"#, "\n",
            r#"{"test_id":"T2","solution_id":"bug1","status":"fail"}"#, "\n",
            r#"{"test_id":"T1","solution_id":"bug2","status":"pass"}"#, "\n",
            r#"{"test_id":"T2","solution_id":"bug2","status":"timeout"}"#, "\n",
        ),
    )
    .unwrap();
    let inputs = EvaluationInputs {
        kill_matrix: Some(read_kill_matrix(&kills).unwrap()),
        solution_outcomes: Some(read_solution_outcomes(&outcomes).unwrap()),
    };
    let cfg = EpisodeConfig::<f64> { budget: 2, ..Default::default() };
    let report = evaluate(&[common::three_tests()], &Policy::PoolGreedy, &cfg, &inputs).unwrap();
    assert_eq!(report.mutation_score, Some(2.0 / 3.0));
    assert_eq!(report.bug_detection_rate, Some(0.5));
    assert_eq!(report.episodes[0].bug_detected, Some(true));
    assert!((report.line_coverage - 5.0 / 6.0).abs() < 1e-12);

    fs::write(&kills, "{\"mutant_id\": 3}\n").unwrap();
    assert!(matches!(read_kill_matrix(&kills), Err(Error::Parse { line: 1, .. })));
}
