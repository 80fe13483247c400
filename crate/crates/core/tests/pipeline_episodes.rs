use std::collections::BTreeSet;
use std::sync::Arc;

use xicm_core::bench::{ablate_selection, run_benchmark, sweep_k, BenchConfig};
use xicm_core::dynamics::FeatureMode;
use xicm_core::pipeline::{run_episode, Backend, EpisodeSettings, Pipeline, SelectionMode};
use xicm_core::sim::{find_task, generate_seen_dataset, resolve_tasks, FailureReason, SimConfig};

fn pipeline(episodes: usize) -> Pipeline {
    let cfg = SimConfig {
        image_size: 16,
        ..SimConfig::default()
    };
    let ds = generate_seen_dataset(&resolve_tasks("seen").unwrap(), episodes, 3, &cfg).unwrap();
    Pipeline::new(Arc::new(ds), None, FeatureMode::VisInLang).unwrap()
}

fn settings(k: usize) -> EpisodeSettings {
    EpisodeSettings {
        k,
        selection: SelectionMode::Dynamics,
    }
}

#[test]
fn echo_succeeds_when_the_nearest_demo_solves_the_task() {
    let p = pipeline(3);
    let task = find_task("put_block_on_shelf").unwrap();
    let out = run_episode(&p, &task, 11, settings(4), &Backend::Echo).unwrap();
    assert!(out.top_demo.starts_with("put_block_in_bin_"), "{}", out.top_demo);
    assert!(out.result.success, "{:?}", out.result);
}

#[test]
fn prose_backend_is_a_parse_failure() {
    let p = pipeline(2);
    let task = find_task("push_lever").unwrap();
    let out = run_episode(&p, &task, 5, settings(2), &Backend::prose()).unwrap();
    assert!(!out.result.success);
    assert_eq!(out.result.failure_reason, Some(FailureReason::ParseFailure));
    assert_eq!(out.result.steps_executed, 0);
}

#[test]
fn scripted_episodes_are_deterministic() {
    let p = pipeline(2);
    let task = find_task("hang_ring_on_peg").unwrap();
    let a = run_episode(&p, &task, 99, settings(3), &Backend::Oracle).unwrap();
    let b = run_episode(&p, &task, 99, settings(3), &Backend::Oracle).unwrap();
    assert_eq!(a, b);
    assert!(a.result.success);
}

#[test]
fn exhaustive_k_shows_the_same_block_set_under_both_selections() {
    let p = pipeline(2);
    let n = p.pool().len();
    let task = find_task("close_drawer").unwrap();
    let scene = task.sample_scene(4, p.dataset().manifest().sim);
    let obs = p.query_observation(&scene);
    let objects = scene.object_records();
    let ids = |sel| -> BTreeSet<String> {
        p.prompt_for(&obs, task.language, &objects, n, sel, 17)
            .unwrap()
            .demo_blocks
            .into_iter()
            .map(|b| b.demo_id)
            .collect()
    };
    let dynamics = ids(SelectionMode::Dynamics);
    assert_eq!(dynamics.len(), n);
    assert_eq!(dynamics, ids(SelectionMode::Random));
}

fn bench_cfg(k: usize) -> BenchConfig {
    BenchConfig {
        tasks: resolve_tasks("unseen").unwrap().iter().map(|t| t.name.to_string()).collect(),
        runs: 2,
        rollouts_per_run: 3,
        seeds: vec![10, 20],
        k,
        feature_mode: FeatureMode::VisInLang,
        ..BenchConfig::default()
    }
}

#[test]
fn ablation_pairs_episodes_and_is_repeatable() {
    let p = pipeline(2);
    let a = ablate_selection(&p, &bench_cfg(4), &Backend::Echo).unwrap();
    let b = ablate_selection(&p, &bench_cfg(4), &Backend::Echo).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.dynamics.episodes.len(), a.random.episodes.len());
    for (d, r) in a.dynamics.episodes.iter().zip(&a.random.episodes) {
        assert_eq!((d.run, d.episode, &d.result.task), (r.run, r.episode, &r.result.task));
        assert_eq!(d.result.episode_seed, r.result.episode_seed);
    }
    for delta in &a.deltas {
        assert!((delta.delta - (delta.dynamics - delta.random)).abs() < 1e-15);
    }
}

#[test]
fn sweep_at_n_matches_a_plain_benchmark() {
    let p = pipeline(2);
    let n = p.pool().len();
    let sweep = sweep_k(&p, &bench_cfg(1), &[n], &Backend::Echo).unwrap();
    assert_eq!(sweep.points.len(), 1);
    let plain = run_benchmark(&p, &bench_cfg(n), &Backend::Echo).unwrap();
    assert_eq!(sweep.points[0].report, plain);
    assert_eq!(sweep.to_csv().lines().count(), 2);
}

#[test]
fn configuration_errors_stop_before_any_episode() {
    let p = pipeline(1);
    let too_big = bench_cfg(p.pool().len() + 1);
    assert!(run_benchmark(&p, &too_big, &Backend::Echo).is_err());
    let wrong_mode = BenchConfig {
        feature_mode: FeatureMode::Lang,
        ..bench_cfg(2)
    };
    assert!(run_benchmark(&p, &wrong_mode, &Backend::Echo).is_err());
    assert!(sweep_k(&p, &bench_cfg(2), &[], &Backend::Echo).is_err());
    assert!(sweep_k(&p, &bench_cfg(2), &[1, 999], &Backend::Echo).is_err());
}

#[test]
fn level_aggregates_are_unweighted_task_means() {
    let p = pipeline(2);
    let report = run_benchmark(&p, &bench_cfg(3), &Backend::Echo).unwrap();
    for level in &report.levels {
        let members: Vec<f64> = report
            .tasks
            .iter()
            .filter(|t| t.level.name() == level.group)
            .map(|t| t.mean)
            .collect();
        assert_eq!(members.len(), level.task_count);
        let expected = members.iter().sum::<f64>() / members.len() as f64;
        assert!((level.mean - expected).abs() < 1e-12);
    }
}
