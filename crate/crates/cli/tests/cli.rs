use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use transferma_cli::manifest::{Job, RunManifest};
use transferma_cli::model::ModelRecord;
use transferma_core::io::{read_dataset, read_edge_values, read_metrics, read_truth, write_heldout, write_predictions};
use transferma_core::EdgeId;

const SCENARIO: &str = r#"
example = "ex1"
family = "gaussian"
n = 40
layers = 3
sigma = 1.0
dims = [2, 2, 2]
seed = 3
"#;

fn transferma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transferma"))
        .args(args)
        .env_remove("TRANSFERMA_THREADS")
        .output()
        .expect("spawn transferma")
}

fn ok(args: &[&str]) -> Output {
    let out = transferma(args);
    assert!(
        out.status.success(),
        "transferma {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the small scenario and simulates one replicate into `dir`.
fn simulated(dir: &Path) -> PathBuf {
    let scenario = dir.join("scenario.toml");
    fs::write(&scenario, SCENARIO).unwrap();
    let out = dir.join("sim");
    ok(&["simulate", "--scenario", s(&scenario), "--replicates", "1", "--out", s(&out)]);
    out.join("rep-000")
}

fn run_dir(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["run", "--data", s(data), "--dims", "1,2", "--k", "5", "--seed", "11", "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn simulate_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    fs::write(&scenario, SCENARIO).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["simulate", "--scenario", s(&scenario), "--replicates", "2", "--out", s(out)]);
    }
    for rep in ["rep-000", "rep-001"] {
        for f in ["dataset.txt", "truth.txt"] {
            assert_eq!(fs::read(a.join(rep).join(f)).unwrap(), fs::read(b.join(rep).join(f)).unwrap());
        }
    }
    assert_ne!(
        fs::read(a.join("rep-000/dataset.txt")).unwrap(),
        fs::read(a.join("rep-001/dataset.txt")).unwrap()
    );
    let ds = read_dataset(&a.join("rep-000/dataset.txt")).unwrap();
    assert_eq!((ds.n(), ds.num_layers()), (40, 3));
    let m = RunManifest::read(&a.join("manifest.toml")).unwrap();
    assert_eq!(m.outputs.len(), 6);
}

#[test]
fn simulate_with_builtin_example_writes_dataset_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--example", "ex4", "--replicates", "1", "--out", s(dir.path())]);
    let ds = read_dataset(&dir.path().join("rep-000/dataset.txt")).unwrap();
    let truth = read_truth(&dir.path().join("rep-000/truth.txt")).unwrap();
    assert_eq!(ds.n(), 200);
    assert_eq!(truth.mean.len(), ds.num_layers());
}

#[test]
fn unknown_example_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = transferma(&["simulate", "--example", "ex9", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = transferma(&["reproduce", "--example", "6", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = transferma(&["run", "--data", "x.txt", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "--dims is required");
}

#[test]
fn bad_scenario_file_is_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    fs::write(&scenario, SCENARIO.replace("ex1", "ex9")).unwrap();
    let out = transferma(&["simulate", "--scenario", s(&scenario), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(5));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("scenario.toml"), "{stderr}");
}

#[test]
fn missing_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("absent.txt");
    let out = transferma(&["run", "--data", s(&data), "--dims", "2", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
}

#[test]
fn malformed_dataset_reports_line_and_invalid_input() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.txt");
    fs::write(&data, "n 4\nlayers 1\ndirected undirected\nfamily 1 gaussian\nedges\n1 1 2 0.5\n1 2 2 1.0\n").unwrap();
    let out = transferma(&["run", "--data", s(&data), "--dims", "1", "--k", "2", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.txt:7"));
}

#[test]
fn run_writes_predictions_weights_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let out = dir.path().join("run");
    run_dir(&rep.join("dataset.txt"), &out, &[]);

    let ds = read_dataset(&rep.join("dataset.txt")).unwrap();
    let preds = read_edge_values(&out.join("predictions.csv")).unwrap();
    let predicted: Vec<EdgeId> = preds.keys().copied().collect();
    assert_eq!(predicted, ds.target().missing());

    let weights = fs::read_to_string(out.join("weights.csv")).unwrap();
    let mut lines = weights.lines();
    assert_eq!(lines.next(), Some("layer,dim,weight,cv"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3 * 2);
    let total: f64 = rows.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() >= 0.0));

    let m = RunManifest::read(&out.join("manifest.toml")).unwrap();
    let Job::Run(job) = &m.job else { panic!("expected a run job") };
    assert_eq!((job.dims.clone(), job.k, job.seed), (vec![1, 2], 5, 11));
    assert_eq!(m.software_version, transferma_core::VERSION);
    assert!(m.timings.contains_key("fits_secs"));
    let diag = m.diagnostics.unwrap();
    assert_eq!(diag.fold_sizes.len(), 5);
    assert_eq!(diag.fits, 2 * (5 + 1) + 2 * 2);
}

#[test]
fn worker_mode_output_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let data = rep.join("dataset.txt");
    let a = dir.path().join("inprocess");
    let b = dir.path().join("workers");
    run_dir(&data, &a, &["--mode", "inprocess"]);
    run_dir(&data, &b, &["--mode", "workers"]);
    for f in ["predictions.csv", "weights.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn replaying_a_run_manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let first = dir.path().join("first");
    run_dir(&rep.join("dataset.txt"), &first, &["--threads", "2"]);
    let again = dir.path().join("again");
    ok(&["replay", "--manifest", s(&first.join("manifest.toml")), "--out", s(&again), "--threads", "1"]);
    for f in ["predictions.csv", "weights.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn replaying_a_simulate_manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let again = dir.path().join("again");
    ok(&["replay", "--manifest", s(&rep.join("manifest.toml")), "--out", s(&again)]);
    for f in ["dataset.txt", "truth.txt"] {
        assert_eq!(fs::read(rep.join(f)).unwrap(), fs::read(again.join("rep-000").join(f)).unwrap());
    }
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let out = dir.path().join("run");
    let status = Command::new(env!("CARGO_BIN_EXE_transferma"))
        .args(["run", "--data", s(&rep.join("dataset.txt")), "--dims", "1", "--k", "3", "--out", s(&out)])
        .env("TRANSFERMA_THREADS", "3")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(RunManifest::read(&out.join("manifest.toml")).unwrap().threads, 3);
}

#[test]
fn eval_scores_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let ds = read_dataset(&rep.join("dataset.txt")).unwrap();
    let truth = read_truth(&rep.join("truth.txt")).unwrap();
    let missing = ds.target().missing();
    let metrics = dir.path().join("metrics.csv");

    // Perfect predictions score zero.
    let perfect = missing.iter().map(|&e| (e, truth.mean[0].get(e))).collect();
    let perfect_path = dir.path().join("perfect.csv");
    write_predictions(&perfect_path, &perfect).unwrap();
    let out = ok(&[
        "eval", "--predictions", s(&perfect_path), "--truth", s(&rep.join("truth.txt")),
        "--data", s(&rep.join("dataset.txt")), "--out", s(&metrics), "--method", "oracle",
    ]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "SMPR 0");

    // Constant 0.5 on m binary held-out values scores √m·0.5.
    let m = 37;
    let edges: Vec<EdgeId> = transferma_core::all_pairs(40).take(m).collect();
    let heldout = edges.iter().enumerate().map(|(k, &e)| (e, (k % 2) as f64)).collect();
    let half = edges.iter().map(|&e| (e, 0.5)).collect();
    let heldout_path = dir.path().join("heldout.csv");
    let half_path = dir.path().join("half.csv");
    write_heldout(&heldout_path, &heldout).unwrap();
    write_predictions(&half_path, &half).unwrap();
    for replicate in ["0", "1"] {
        ok(&[
            "eval", "--predictions", s(&half_path), "--heldout", s(&heldout_path), "--out", s(&metrics),
            "--method", "half", "--replicate", replicate,
        ]);
    }
    let rows = read_metrics(&metrics).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].value, 0.0);
    for r in &rows[1..] {
        assert!((r.value - (m as f64).sqrt() * 0.5).abs() < 1e-12);
        assert_eq!(r.metric.to_string(), "SMPE");
    }
}

#[test]
fn eval_rejects_misaligned_edges() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let ds = read_dataset(&rep.join("dataset.txt")).unwrap();
    let mut missing = ds.target().missing();
    missing.pop();
    let preds = missing.iter().map(|&e| (e, 0.0)).collect();
    let path = dir.path().join("short.csv");
    write_predictions(&path, &preds).unwrap();
    let metrics = dir.path().join("metrics.csv");
    let out = transferma(&[
        "eval", "--predictions", s(&path), "--truth", s(&rep.join("truth.txt")),
        "--data", s(&rep.join("dataset.txt")), "--out", s(&metrics),
    ]);
    assert_eq!(out.status.code(), Some(5));

    let heldout = [(EdgeId::new(0, 1).unwrap(), 1.0)].into_iter().collect();
    let heldout_path = dir.path().join("heldout.csv");
    write_heldout(&heldout_path, &heldout).unwrap();
    let none = dir.path().join("none.csv");
    write_predictions(&none, &[(EdgeId::new(0, 2).unwrap(), 1.0)].into_iter().collect()).unwrap();
    let out = transferma(&["eval", "--predictions", s(&none), "--heldout", s(&heldout_path), "--out", s(&metrics)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(!metrics.exists());
}

#[test]
fn fit_exports_a_readable_model() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let model = dir.path().join("model.toml");
    ok(&["fit", "--data", s(&rep.join("dataset.txt")), "--layer", "2", "--dim", "2", "--seed", "4", "--out", s(&model)]);
    let rec = ModelRecord::read(&model).unwrap();
    assert_eq!((rec.n, rec.d, rec.layer, rec.seed), (40, 2, 2, 4));
    let params = rec.params().unwrap();
    assert!(params.alpha.iter().chain(params.u.iter()).all(|v| v.is_finite()));

    let out = transferma(&["fit", "--data", s(&rep.join("dataset.txt")), "--layer", "4", "--dim", "2", "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn reproduce_writes_series_for_every_k() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["reproduce", "--example", "1d", "--replicates", "1", "--threads", "1", "--out", s(dir.path())]);
    let series = fs::read_to_string(dir.path().join("fig1d_series.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next(), Some("figure,x_name,x,series,count,median,q1,q3,min,max"));
    let ks: Vec<String> = lines.map(|l| l.split(',').nth(2).unwrap().to_string()).collect();
    assert_eq!(ks, ["5", "10", "20", "50", "100"]);
    let metrics = read_metrics(&dir.path().join("fig1d_metrics.csv")).unwrap();
    assert_eq!(metrics.len(), 5);
    let m = RunManifest::read(&dir.path().join("manifest.toml")).unwrap();
    assert!(matches!(m.job, Job::Reproduce(ref j) if j.figure == "1d"));
}

#[test]
fn holdout_then_run_then_smpe() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    fs::write(&scenario, SCENARIO.replace("gaussian", "logistic")).unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--scenario", s(&scenario), "--out", s(&sim)]);
    let full = sim.join("rep-000/dataset.txt");
    let split = dir.path().join("split");
    ok(&["holdout", "--data", s(&full), "--rate", "0.2", "--seed", "5", "--out", s(&split)]);

    let original = read_dataset(&full).unwrap();
    let reduced = read_dataset(&split.join("dataset.txt")).unwrap();
    let heldout = read_edge_values(&split.join("heldout.csv")).unwrap();
    let observed = original.target().len();
    assert_eq!(heldout.len(), (0.2 * observed as f64).round() as usize);
    assert_eq!(reduced.target().len() + heldout.len(), observed);
    for (e, v) in &heldout {
        assert_eq!(original.target().get(*e), Some(*v));
        assert_eq!(reduced.target().get(*e), None);
    }
    for r in 1..original.num_layers() {
        assert_eq!(reduced.layer(r), original.layer(r));
    }

    let run = dir.path().join("run");
    run_dir(&split.join("dataset.txt"), &run, &[]);
    let metrics = dir.path().join("metrics.csv");
    let out = ok(&[
        "eval", "--predictions", s(&run.join("predictions.csv")), "--heldout", s(&split.join("heldout.csv")),
        "--out", s(&metrics),
    ]);
    let value: f64 = String::from_utf8_lossy(&out.stdout).trim().strip_prefix("SMPE ").unwrap().parse().unwrap();
    // Binary values against probabilities: each term is below 1.
    assert!(value > 0.0 && value < (heldout.len() as f64).sqrt());
}
