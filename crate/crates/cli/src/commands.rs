use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use transferma_core::eval::{smpe, smpr, MetricKind, MetricReport};
use transferma_core::experiments::{run_figure, study_fit_options, Figure, SweepOptions, SERIES_HEADER};
use transferma_core::io::{
    append_metrics, atomic_write, format_weights, read_dataset, read_edge_values, read_truth,
    write_dataset, write_heldout, write_metrics, write_predictions, write_table, write_truth,
};
use transferma_core::protocol::task_stream;
use transferma_core::rng::{Purpose, RngStream, StreamId};
use transferma_core::simgen::{Example, SimScenario};
use transferma_core::{
    fit as fit_layer, mask_edges, run_transfer_ma, EdgeId, Error, Execution, FitOptions, MultilayerDataset, Result,
    TransferMaConfig, WorkerCommand,
};

use crate::manifest::{read_toml, HoldoutJob, Job, ReproduceJob, RunDiagnostics, RunJob, RunManifest, SimulateJob};
use crate::model::ModelRecord;
use crate::{thread_count, EvalArgs, FitArgs, HoldoutArgs, Mode, ReplayArgs, ReproduceArgs, RunArgs, SimulateArgs};

pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";

/// Baseline scenario of each simulation example at n = 200.
fn baseline(example: Example, args: &SimulateArgs) -> SimScenario {
    let family = args.family.into();
    match example {
        Example::Ex1 => SimScenario::example1(200, 4, 3.0, family, args.seed),
        Example::Ex2 => SimScenario::example2(200, vec![3, 1, 2, 4], family, args.seed),
        Example::Ex3 => SimScenario::example3(200, args.seed),
        Example::Ex4 => SimScenario::example4(200, args.seed),
        Example::Ex5 => SimScenario::example5(200, 4, 3.0, args.seed),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let scenario = match (&args.scenario, args.example) {
        (Some(path), _) => read_toml::<SimScenario>(path)?,
        (None, Some(example)) => baseline(example, args),
        (None, None) => return Err(Error::invalid("either --scenario or --example is required")),
    };
    let job = SimulateJob {
        first_replicate: 0,
        replicates: args.replicates,
        scenario,
    };
    execute_simulate(&job, &args.out).map(|_| ())
}

fn replicate_dir(r: u32) -> String {
    format!("rep-{r:03}")
}

fn execute_simulate(job: &SimulateJob, out: &Path) -> Result<RunManifest> {
    job.scenario.validate()?;
    let mut manifest = RunManifest::new(Job::Simulate(job.clone()), 1);
    let t = Instant::now();
    for r in job.first_replicate..job.first_replicate + job.replicates {
        let dir = out.join(replicate_dir(r));
        let (ds, truth) = job.scenario.generate(r)?;
        write_dataset(&dir.join("dataset.txt"), &ds)?;
        write_truth(&dir.join("truth.txt"), &truth, ds.n())?;
        let single = SimulateJob {
            first_replicate: r,
            replicates: 1,
            scenario: job.scenario.clone(),
        };
        let mut rep = RunManifest::new(Job::Simulate(single), 1);
        rep.outputs = vec!["dataset.txt".into(), "truth.txt".into()];
        rep.write(&dir)?;
        for name in ["dataset.txt", "truth.txt", "manifest.toml"] {
            manifest.outputs.push(format!("{}/{name}", replicate_dir(r)));
        }
    }
    manifest.timings.insert("generate_secs".into(), t.elapsed().as_secs_f64());
    manifest.write(out)?;
    Ok(manifest)
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(|e| Error::io(path, e))
}

pub fn run(args: &RunArgs) -> Result<()> {
    let job = RunJob {
        data: absolute(&args.data)?,
        dims: args.dims.clone(),
        k: args.k,
        seed: args.seed,
        mode: args.mode,
        init: args.init,
        max_iters: args.max_iters,
        rel_tol: args.rel_tol,
        worker: args.worker.clone(),
    };
    execute_run(&job, &args.out, thread_count(args.threads)).map(|_| ())
}

fn fit_options(init: crate::InitArg, max_iters: usize, rel_tol: f64) -> FitOptions {
    FitOptions {
        init: init.into(),
        max_iters,
        rel_tol,
        ..study_fit_options()
    }
}

fn execution(job: &RunJob) -> Result<Execution> {
    Ok(match job.mode {
        Mode::Inprocess => Execution::InProcess,
        Mode::Workers => {
            let cmd = match &job.worker {
                Some(program) => WorkerCommand::new(program),
                None => {
                    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
                    WorkerCommand::new(exe).arg("worker")
                }
            };
            Execution::Workers(WorkerCommand {
                layer_file: Some(job.data.clone()),
                ..cmd
            })
        }
    })
}

fn execute_run(job: &RunJob, out: &Path, threads: usize) -> Result<RunManifest> {
    let t = Instant::now();
    let dataset = read_dataset(&job.data)?;
    let read_secs = t.elapsed().as_secs_f64();

    let mut cfg = TransferMaConfig::new(job.dims.clone(), job.k, job.seed);
    cfg.fit_options = fit_options(job.init, job.max_iters, job.rel_tol);
    cfg.execution = execution(job)?;
    cfg.threads = threads;
    let result = run_transfer_ma(&dataset, &cfg)?;

    let t = Instant::now();
    write_predictions(&out.join(PREDICTIONS_FILE), &result.predictions)?;
    let weights: Vec<_> = result.weights.index.iter().copied().zip(result.weights.w.iter().copied()).collect();
    atomic_write(
        &out.join(WEIGHTS_FILE),
        format_weights(&weights, &result.diagnostics.candidate_cv).as_bytes(),
    )?;
    let write_secs = t.elapsed().as_secs_f64();

    let diag = &result.diagnostics;
    let mut manifest = RunManifest::new(Job::Run(job.clone()), threads);
    manifest.outputs = vec![PREDICTIONS_FILE.into(), WEIGHTS_FILE.into()];
    for (name, secs) in [
        ("read_secs", read_secs),
        ("folds_secs", diag.timings.folds_secs),
        ("fits_secs", diag.timings.fits_secs),
        ("solve_secs", diag.timings.solve_secs),
        ("predict_secs", diag.timings.predict_secs),
        ("write_secs", write_secs),
    ] {
        manifest.timings.insert(name.into(), secs);
    }
    manifest.diagnostics = Some(RunDiagnostics {
        cv_value: result.cv_value,
        kkt_residual: diag.kkt_residual,
        solver_iterations: diag.solver_iterations,
        fold_sizes: diag.fold_sizes.clone(),
        fits: diag.fits.len(),
        unconverged_fits: diag.fits.iter().filter(|f| !f.converged).count(),
    });
    manifest.write(out)?;
    Ok(manifest)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let preds = read_edge_values(&args.predictions)?;
    if let Some(data) = &args.data {
        let ds = read_dataset(data)?;
        let missing: BTreeSet<EdgeId> = ds.target().missing().into_iter().collect();
        let predicted: BTreeSet<EdgeId> = preds.keys().copied().collect();
        if missing != predicted {
            return Err(Error::invalid(format!(
                "{} predicts {} pairs but the target of {} has {} missing pairs",
                args.predictions.display(),
                predicted.len(),
                data.display(),
                missing.len()
            )));
        }
    }
    let (metric, value) = match (&args.truth, &args.heldout) {
        (Some(truth), _) => {
            let table = read_truth(truth)?;
            let edges: Vec<EdgeId> = preds.keys().copied().collect();
            (MetricKind::Smpr, smpr(&preds, &table.mean[0], &edges)?)
        }
        (None, Some(heldout)) => (MetricKind::Smpe, smpe(&preds, &read_edge_values(heldout)?)?),
        (None, None) => return Err(Error::invalid("either --truth or --heldout is required")),
    };
    append_metrics(
        &args.out,
        &[MetricReport {
            scenario: args.scenario.clone(),
            method: args.method.clone(),
            replicate: args.replicate,
            metric,
            value,
        }],
    )?;
    println!("{metric} {value}");
    Ok(())
}

pub fn reproduce(args: &ReproduceArgs) -> Result<()> {
    let job = ReproduceJob {
        figure: args.example.id().to_string(),
        replicates: args.replicates,
        seed: args.seed,
        family: args.family.into(),
    };
    execute_reproduce(&job, &args.out, thread_count(args.threads)).map(|_| ())
}

fn execute_reproduce(job: &ReproduceJob, out: &Path, threads: usize) -> Result<RunManifest> {
    let figure: Figure = job.figure.parse()?;
    let opts = SweepOptions {
        replicates: job.replicates,
        seed: job.seed,
        threads,
        family: job.family,
    };
    let t = Instant::now();
    let sweep = run_figure(figure, &opts)?;
    let secs = t.elapsed().as_secs_f64();
    let series = format!("fig{}_series.csv", figure.id());
    let metrics = format!("fig{}_metrics.csv", figure.id());
    let rows: Vec<Vec<String>> = sweep.points.iter().map(|p| p.row()).collect();
    write_table(&out.join(&series), &SERIES_HEADER, &rows)?;
    write_metrics(&out.join(&metrics), &sweep.metrics)?;
    let mut manifest = RunManifest::new(Job::Reproduce(job.clone()), threads);
    manifest.outputs = vec![series, metrics];
    manifest.timings.insert("sweep_secs".into(), secs);
    manifest.write(out)?;
    Ok(manifest)
}

pub fn replay(args: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    let threads = thread_count(args.threads);
    match &manifest.job {
        Job::Simulate(job) => execute_simulate(job, &args.out),
        Job::Run(job) => execute_run(job, &args.out, threads),
        Job::Reproduce(job) => execute_reproduce(job, &args.out, threads),
        Job::Holdout(job) => execute_holdout(job, &args.out),
    }
    .map(|_| ())
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    if args.layer == 0 || args.layer > ds.num_layers() {
        return Err(Error::invalid(format!(
            "layer {} is out of range 1..={}",
            args.layer,
            ds.num_layers()
        )));
    }
    let r = args.layer - 1;
    let opts = fit_options(args.init, args.max_iters, args.rel_tol).with_rng(task_stream(args.seed, r, args.dim, None));
    let family = ds.family(r);
    let fitted = fit_layer(ds.layer(r), family, args.dim, &opts)?;
    ModelRecord::from_fit(&fitted, family, args.layer, args.seed).write(&args.out)?;
    println!(
        "layer {} d={} objective {} after {} iterations{}",
        args.layer,
        args.dim,
        fitted.objective,
        fitted.iterations,
        if fitted.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

pub fn holdout(args: &HoldoutArgs) -> Result<()> {
    let job = HoldoutJob {
        data: absolute(&args.data)?,
        rate: args.rate,
        seed: args.seed,
    };
    execute_holdout(&job, &args.out).map(|_| ())
}

fn execute_holdout(job: &HoldoutJob, out: &Path) -> Result<RunManifest> {
    let ds = read_dataset(&job.data)?;
    let target = ds.target();
    let observed: BTreeSet<EdgeId> = target.iter().map(|(e, _)| e).collect();
    let stream = RngStream::new(job.seed, StreamId::new(Purpose::Mask).layer(0));
    let (_, hidden) = mask_edges(&observed, job.rate, &stream)?;
    let heldout = hidden.iter().map(|&e| (e, target.get(e).expect("hidden pairs were observed"))).collect();
    let mut layers = ds.layers().to_vec();
    layers[0] = target.restrict(|e| !hidden.contains(&e));
    let reduced = MultilayerDataset::new(layers, ds.families().to_vec())?;
    write_dataset(&out.join("dataset.txt"), &reduced)?;
    write_heldout(&out.join("heldout.csv"), &heldout)?;
    let mut manifest = RunManifest::new(Job::Holdout(job.clone()), 1);
    manifest.outputs = vec!["dataset.txt".into(), "heldout.csv".into()];
    manifest.write(out)?;
    Ok(manifest)
}
