use std::fs;

use prag_core::agent::BackendConfig;
use prag_core::driver::{load_reports, run_iterations, Mode, RunConfig, Runner, TaskSource};
use prag_core::trajectory_db::TrajectoryDb;

fn copy_bundled(dir: &std::path::Path, ids: &[&str]) {
    let src = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tasks");
    for id in ids {
        fs::copy(src.join(format!("{id}.toml")), dir.join(format!("{id}.toml"))).unwrap();
    }
}

#[test]
fn train_then_frozen_eval() {
    let train = tempfile::tempdir().unwrap();
    let eval = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    copy_bundled(train.path(), &["move_mug_to_table", "shelve_book", "wash_mug"]);
    copy_bundled(eval.path(), &["move_mug_to_table", "fetch_bowl_from_cabinet"]);
    let config = RunConfig {
        mode: Mode::TrainEval,
        tasks: TaskSource::Dir(train.path().into()),
        eval_tasks: Some(TaskSource::Dir(eval.path().into())),
        iterations: 2,
        seed: 7,
        output_dir: Some(out.path().into()),
        ..RunConfig::default()
    };
    let outcome = run_iterations(&config).unwrap();
    let eval_report = outcome.eval.expect("eval pass in train-eval mode");
    assert_eq!(eval_report.results.len(), 2);
    assert_eq!(eval_report.iteration, outcome.reports.len() + 1);
    // The eval pass leaves the database untouched.
    let saved = TrajectoryDb::load(&out.path().join(format!("iter_{:02}/db.jsonl", outcome.reports.len()))).unwrap();
    assert_eq!(saved, outcome.db);
    assert_eq!(saved.len(), 3);
    assert!(out.path().join("eval/report.json").exists());
    assert!(out.path().join("eval/episodes/fetch_bowl_from_cabinet.json").exists());
    let summary = fs::read_to_string(out.path().join("summary.txt")).unwrap();
    assert!(summary.contains("eval (frozen database)"));
    assert_eq!(load_reports(out.path()).unwrap(), outcome.reports);
}

#[test]
fn dead_backend_never_aborts_the_run() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let config = RunConfig {
        iterations: 2,
        early_stop: false,
        backend: BackendConfig::RemoteChat {
            base_url,
            model: "m".into(),
            api_key_env: "PRAG_TEST_UNSET_KEY".into(),
            temperature: 0.0,
            timeout_secs: 2,
        },
        ..RunConfig::default()
    };
    let outcome = Runner::from_config(config).unwrap().run().unwrap();
    for r in &outcome.reports {
        assert_eq!(r.results.len(), 6);
        assert_eq!(r.planner_failures, 6);
        assert_eq!(r.total_sr, 0.0);
    }
    assert_eq!(outcome.db.len(), 6);
    assert!(outcome.db.records().all(|r| !r.done));
}

#[test]
fn explorer_backend_runs_without_retrieval_replay() {
    let config = RunConfig {
        iterations: 2,
        early_stop: false,
        seed: 3,
        backend: BackendConfig::SeededExplorer,
        ..RunConfig::default()
    };
    let outcome = run_iterations(&config).unwrap();
    assert_eq!(outcome.reports.len(), 2);
    assert_eq!(outcome.reports[0].retrieval_calls, 0);
    assert!(outcome.reports[1].retrieval_calls > 0);
    for r in &outcome.reports {
        assert!(r.spl <= r.total_sr + 1e-12);
        assert_eq!(r.planner_failures, 0);
    }
}

#[test]
fn missing_task_dir_is_an_error() {
    let config = RunConfig {
        tasks: TaskSource::Dir("/nonexistent/prag/tasks".into()),
        ..RunConfig::default()
    };
    assert!(run_iterations(&config).is_err());
}
