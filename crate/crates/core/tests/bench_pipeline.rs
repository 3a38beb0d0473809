mod common;

use std::fs;
use std::path::Path;

use hqnn::bench::plot::{plot, PlotAxis, PlotFilter};
use hqnn::bench::{
    read_metrics, run, run_csv_path, run_grid, ExperimentGrid, RunOptions, TrainingSettings, METRICS_FILE,
    METRICS_HEADER,
};
use hqnn::models::{Algo, ModelConfig};
use hqnn::templates::EntanglerKind;
use hqnn::Error;

fn small() -> TrainingSettings {
    TrainingSettings { epochs: 5, batch_size: 5, learning_rate: 0.01, n_train: 20, n_test: 12 }
}

fn cfg() -> ModelConfig {
    ModelConfig::new(Algo::QuanNN, EntanglerKind::BE, 1, 4, 0)
}

/// CSV text with the trailing wall-clock column removed.
fn without_wall(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_writes_five_epochs_and_finalises() {
    let raw = common::synthetic_mnist(40, 0);
    let dir = tempfile::tempdir().unwrap();
    let settings = TrainingSettings { n_train: 100, ..small() };
    let opts = RunOptions { overwrite: false, log_batches: true };
    let recs = run(&cfg(), &settings, &raw, dir.path(), opts).unwrap();
    assert_eq!(recs.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert!(recs.iter().all(|r| (0.0..=1.0).contains(&r.test_acc) && (0.0..=1.0).contains(&r.train_acc)));
    let path = run_csv_path(dir.path(), &cfg().run_id());
    assert_eq!(read_metrics(&path).unwrap(), recs);
    assert!(!dir.path().join("runs").join(format!("{}.csv.partial", cfg().run_id())).exists());

    let batches = fs::read_to_string(dir.path().join("runs").join(format!("{}.batches.csv", cfg().run_id()))).unwrap();
    assert_eq!(batches.lines().count(), 1 + 5 * 20);
}

#[test]
fn identical_runs_give_identical_csv() {
    let raw = common::synthetic_mnist(20, 0);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = ModelConfig::new(Algo::QResNet, EntanglerKind::RC, 2, 4, 3);
    run(&c, &small(), &raw, a.path(), RunOptions::default()).unwrap();
    run(&c, &small(), &raw, b.path(), RunOptions::default()).unwrap();
    let (pa, pb) = (run_csv_path(a.path(), &c.run_id()), run_csv_path(b.path(), &c.run_id()));
    assert_eq!(without_wall(&pa), without_wall(&pb));
}

#[test]
fn completed_runs_are_reused_or_replaced() {
    let raw = common::synthetic_mnist(20, 0);
    let dir = tempfile::tempdir().unwrap();
    let first = run(&cfg(), &small(), &raw, dir.path(), RunOptions::default()).unwrap();
    let path = run_csv_path(dir.path(), &cfg().run_id());
    let before = fs::read_to_string(&path).unwrap();

    let again = run(&cfg(), &small(), &raw, dir.path(), RunOptions::default()).unwrap();
    assert_eq!(first, again);
    assert_eq!(before, fs::read_to_string(&path).unwrap());

    let replaced = run(&cfg(), &small(), &raw, dir.path(), RunOptions { overwrite: true, log_batches: false }).unwrap();
    assert_eq!(replaced.len(), 5);
    assert_eq!(without_wall(&path), before.lines().map(|l| l.rsplit_once(',').unwrap().0).collect::<Vec<_>>().join("\n"));

    let other = TrainingSettings { epochs: 2, ..small() };
    assert!(matches!(run(&cfg(), &other, &raw, dir.path(), RunOptions::default()), Err(Error::Config(_))));
}

#[test]
fn stale_partial_file_is_replaced() {
    let raw = common::synthetic_mnist(20, 0);
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    fs::create_dir_all(&runs).unwrap();
    let partial = runs.join(format!("{}.csv.partial", cfg().run_id()));
    fs::write(&partial, "garbage from an interrupted run\n").unwrap();
    run(&cfg(), &small(), &raw, dir.path(), RunOptions::default()).unwrap();
    assert!(!partial.exists());
    assert_eq!(read_metrics(&run_csv_path(dir.path(), &cfg().run_id())).unwrap().len(), 5);
}

#[test]
fn io_errors_name_the_run() {
    let raw = common::synthetic_mnist(20, 0);
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let err = run(&cfg(), &small(), &raw, &blocker, RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains(&cfg().run_id()));
}

#[test]
fn grid_assembles_sorted_metrics_and_plots() {
    let raw = common::synthetic_mnist(20, 0);
    let dir = tempfile::tempdir().unwrap();
    let grid = ExperimentGrid {
        algos: vec![Algo::QCNN, Algo::QuanNN],
        entanglers: vec![EntanglerKind::SE, EntanglerKind::BE],
        layer_counts: vec![2, 1],
        qubit_counts: vec![8, 4],
        seeds: vec![1, 0],
        training: TrainingSettings { epochs: 2, n_train: 8, n_test: 4, ..small() },
    };
    let report = run_grid(&grid, &raw, dir.path(), 2, RunOptions::default()).unwrap();
    assert_eq!(report.expansion.cells.len(), 16);
    assert_eq!(report.expansion.skipped.len(), 16);
    let csv = dir.path().join(METRICS_FILE);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_HEADER.join(","));
    let recs = read_metrics(&csv).unwrap();
    assert_eq!(recs, report.records);
    assert_eq!(recs.len(), 32);
    let keys: Vec<_> = recs.iter().map(|r| (r.run_id.clone(), r.epoch)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let plots = dir.path().join("plots");
    let files = plot(&csv, PlotAxis::Entangler, &PlotFilter::default(), &plots).unwrap();
    // Line charts: QCNN 1-2 stages at 4 qubits plus 1-2 stages at 8, QuanNN 2 layer counts at 4 qubits.
    // Bar charts: one per algorithm.
    assert_eq!(files.len(), 4 + 2 + 2);
    assert!(files.iter().all(|f| f.exists()));
    let filtered = PlotFilter { algo: Some(Algo::QResNet), ..Default::default() };
    assert!(plot(&csv, PlotAxis::Layers, &filtered, &plots).unwrap().is_empty());
}
