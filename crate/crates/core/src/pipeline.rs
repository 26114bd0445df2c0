//! End-to-end Transfer-MA runs.
//!
//! The coordinator owns the target layer: it assigns CV folds, fits every
//! candidate dimension on the full target data and once per held-out fold.
//! Auxiliary layers are fitted once on their full data, either in-process
//! or by a worker subprocess speaking [`crate::protocol`]. Workers return
//! fitted means on the requested pairs and nothing else.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{
    build_cv_problem, make_folds, predict_averaged, solve_weights_with, CandidateId, CandidatePredictions,
    CvProblem, FoldAssignment, MeanMatrix, SolverOptions, WeightVector,
};
use crate::error::{Error, Result};
use crate::family::EdgeFamily;
use crate::graph::{all_pairs, EdgeId, LayerData, MultilayerDataset, SymMatrix};
use crate::lsm::{fit, FitOptions, Provenance};
use crate::protocol::{
    read_message, task_stream, write_message, CandidateReply, ErrorReply, FitRequest, LayerSource, Message,
    WorkerReply,
};
use crate::rng::{Purpose, RngStream, StreamId};

/// How a worker subprocess is launched.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
    /// Longest silence tolerated between two frames from the worker.
    pub timeout: Duration,
    /// When set, workers read their layer from this edge-list file instead
    /// of receiving it over the pipe.
    pub layer_file: Option<PathBuf>,
}

impl WorkerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        WorkerCommand {
            program: program.into(),
            args: Vec::new(),
            timeout: Duration::from_secs(600),
            layer_file: None,
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Execution {
    #[default]
    InProcess,
    Workers(WorkerCommand),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMaConfig {
    /// Candidate latent dimensions, strictly increasing.
    pub candidate_dims: Vec<usize>,
    pub k: usize,
    /// Template; the random stream is replaced per fit task.
    pub fit_options: FitOptions,
    pub seed: u64,
    pub execution: Execution,
    /// Size of the fit task pool.
    pub threads: usize,
    pub solver: SolverOptions,
}

impl TransferMaConfig {
    pub fn new(candidate_dims: Vec<usize>, k: usize, seed: u64) -> Self {
        TransferMaConfig {
            candidate_dims,
            k,
            fit_options: FitOptions::default(),
            seed,
            execution: Execution::InProcess,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self, dataset: &MultilayerDataset) -> Result<()> {
        if self.candidate_dims.is_empty() {
            return Err(Error::invalid("candidate dimension set is empty"));
        }
        if self.candidate_dims[0] == 0 || self.candidate_dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "candidate dimensions must be positive and strictly increasing",
            ));
        }
        if self.k < 2 {
            return Err(Error::invalid("K must be at least 2"));
        }
        let observed = dataset.target().len();
        if observed < self.k {
            return Err(Error::invalid(format!(
                "target layer has {observed} observed edges, fewer than K = {}",
                self.k
            )));
        }
        self.fit_options.validate()
    }
}

/// Outcome of one candidate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub provenance: Provenance,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub folds_secs: f64,
    pub fits_secs: f64,
    pub solve_secs: f64,
    pub predict_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// CV criterion of each candidate used alone.
    pub candidate_cv: Vec<(CandidateId, f64)>,
    pub fold_sizes: Vec<usize>,
    pub fits: Vec<FitRecord>,
    /// Provenance of the matrices combined into the final prediction.
    pub prediction_sources: Vec<Provenance>,
    pub kkt_residual: f64,
    pub solver_iterations: usize,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMaResult {
    pub weights: WeightVector,
    /// Averaged predicted means on the target's unobserved pairs.
    pub predictions: BTreeMap<EdgeId, f64>,
    pub cv_value: f64,
    pub diagnostics: Diagnostics,
}

/// Every candidate's fitted means plus the fit records behind them.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub predictions: CandidatePredictions,
    pub fits: Vec<FitRecord>,
}

/// Runs the full method: folds, candidate fits, weight solve, prediction.
pub fn run_transfer_ma(dataset: &MultilayerDataset, cfg: &TransferMaConfig) -> Result<TransferMaResult> {
    cfg.validate(dataset)?;
    let t = Instant::now();
    let folds = target_folds(dataset, cfg)?;
    let folds_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let candidates = compute_candidates(dataset, cfg, &folds)?;
    let fits_secs = t.elapsed().as_secs_f64();
    let mut result = run_with_candidates(dataset, &candidates.predictions, &folds, &cfg.solver)?;
    result.diagnostics.fits = candidates.fits;
    result.diagnostics.timings.folds_secs = folds_secs;
    result.diagnostics.timings.fits_secs = fits_secs;
    Ok(result)
}

/// Fold assignment of the target's observed edges for `cfg`.
pub fn target_folds(dataset: &MultilayerDataset, cfg: &TransferMaConfig) -> Result<FoldAssignment> {
    let observed: BTreeSet<EdgeId> = dataset.target().observed().collect();
    make_folds(&observed, cfg.k, &RngStream::new(cfg.seed, StreamId::new(Purpose::Folds)))
}

/// Solves for weights over already computed candidates and predicts the
/// target's unobserved pairs.
pub fn run_with_candidates(
    dataset: &MultilayerDataset,
    preds: &CandidatePredictions,
    folds: &FoldAssignment,
    solver: &SolverOptions,
) -> Result<TransferMaResult> {
    let t = Instant::now();
    let problem: CvProblem = build_cv_problem(dataset, preds, folds)?;
    let solution = solve_weights_with(&problem, solver)?;
    let solve_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let missing = dataset.target().missing();
    let predictions = predict_averaged(&solution.weights, preds, &missing)?;
    let predict_secs = t.elapsed().as_secs_f64();
    let prediction_sources = preds
        .candidates()
        .iter()
        .enumerate()
        .map(|(c, _)| preds.full_by_candidate(c).map(|m| m.provenance))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::IncompleteInput("missing full-data candidate".into()))?;
    let cv_value = problem.cv(&solution.weights.w);
    Ok(TransferMaResult {
        cv_value,
        predictions,
        diagnostics: Diagnostics {
            candidate_cv: problem.columns.iter().copied().zip(problem.standalone_cv()).collect(),
            fold_sizes: folds.sizes(),
            fits: Vec::new(),
            prediction_sources,
            kkt_residual: solution.kkt_residual,
            solver_iterations: solution.iterations,
            timings: Timings {
                solve_secs,
                predict_secs,
                ..Timings::default()
            },
        },
        weights: solution.weights,
    })
}

enum Task {
    Target { dim_index: usize, fold: Option<usize> },
    Auxiliary { layer: usize },
}

enum TaskOutput {
    Target {
        dim_index: usize,
        fold: Option<usize>,
        means: MeanMatrix,
        record: FitRecord,
    },
    Auxiliary(WorkerReply),
}

/// Fits every candidate: full and per-fold fits of the target, full fits of
/// each auxiliary layer. Tasks run on a pool of `cfg.threads` threads;
/// results do not depend on scheduling.
pub fn compute_candidates(
    dataset: &MultilayerDataset,
    cfg: &TransferMaConfig,
    folds: &FoldAssignment,
) -> Result<CandidateSet> {
    compute_tasks(dataset, cfg, folds, None)
}

/// Like [`compute_candidates`] for a new fold assignment, reusing the
/// full-data fits of `base` (which must cover `cfg.candidate_dims`).
pub fn refold_candidates(
    dataset: &MultilayerDataset,
    cfg: &TransferMaConfig,
    folds: &FoldAssignment,
    base: &CandidateSet,
) -> Result<CandidateSet> {
    if base.predictions.dims() != cfg.candidate_dims.as_slice()
        || base.predictions.num_layers() != dataset.num_layers()
    {
        return Err(Error::invalid("base candidates do not match the configuration"));
    }
    compute_tasks(dataset, cfg, folds, Some(base))
}

fn compute_tasks(
    dataset: &MultilayerDataset,
    cfg: &TransferMaConfig,
    folds: &FoldAssignment,
    base: Option<&CandidateSet>,
) -> Result<CandidateSet> {
    cfg.validate(dataset)?;
    let dims = &cfg.candidate_dims;
    let mut tasks = Vec::new();
    if base.is_none() {
        for dim_index in 0..dims.len() {
            tasks.push(Task::Target { dim_index, fold: None });
        }
    }
    for dim_index in 0..dims.len() {
        for fold in 0..folds.k() {
            tasks.push(Task::Target { dim_index, fold: Some(fold) });
        }
    }
    if base.is_none() {
        for layer in 1..dataset.num_layers() {
            tasks.push(Task::Auxiliary { layer });
        }
    }

    let run = |task: &Task| -> Result<TaskOutput> {
        match *task {
            Task::Target { dim_index, fold } => {
                let dim = dims[dim_index];
                let (means, record) = fit_target(dataset, cfg, folds, dim, fold)?;
                Ok(TaskOutput::Target {
                    dim_index,
                    fold,
                    means,
                    record,
                })
            }
            Task::Auxiliary { layer } => {
                let request = layer_request(dataset, cfg, layer);
                dispatch_layer_fit(&request, &cfg.execution).map(TaskOutput::Auxiliary)
            }
        }
    };
    let outputs: Vec<Result<TaskOutput>> = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads.max(1)).build() {
        Ok(pool) => pool.install(|| tasks.par_iter().map(run).collect()),
        Err(_) => tasks.iter().map(run).collect(),
    };

    let completed = outputs.iter().filter(|o| o.is_ok()).count();
    let n = dataset.n();
    let (mut preds, mut fits) = match base {
        None => (CandidatePredictions::new(dataset.num_layers(), dims.clone(), folds.k()), Vec::new()),
        Some(b) => (
            b.predictions.refold(folds.k()),
            b.fits.iter().filter(|f| f.provenance.fold.is_none()).copied().collect(),
        ),
    };
    for (task, output) in tasks.iter().zip(outputs) {
        let output = output.map_err(|source| match (task, source) {
            (_, Error::CandidateFit { layer, dim, fold, source, .. }) => Error::CandidateFit {
                layer,
                dim,
                fold,
                completed,
                source,
            },
            (&Task::Target { dim_index, fold }, source) => Error::CandidateFit {
                layer: 0,
                dim: dims[dim_index],
                fold,
                completed,
                source: Box::new(source),
            },
            (&Task::Auxiliary { .. }, source) => source,
        })?;
        match output {
            TaskOutput::Target {
                dim_index,
                fold,
                means,
                record,
            } => {
                fits.push(record);
                match fold {
                    None => preds.insert_full(0, dim_index, means),
                    Some(k) => preds.insert_fold(dim_index, k, means),
                }
            }
            TaskOutput::Auxiliary(reply) => {
                for (dim_index, c) in reply.candidates.iter().enumerate() {
                    let provenance = Provenance {
                        layer: reply.layer,
                        dim: c.dim,
                        fold: None,
                    };
                    fits.push(FitRecord {
                        provenance,
                        objective: c.objective,
                        iterations: c.iterations,
                        converged: c.converged,
                    });
                    let mut means = SymMatrix::filled(n, f64::NAN);
                    for (&e, &m) in reply.edges.iter().zip(&c.means) {
                        means.set(e, m);
                    }
                    preds.insert_full(reply.layer, dim_index, MeanMatrix { means, provenance });
                }
            }
        }
    }
    Ok(CandidateSet { predictions: preds, fits })
}

/// Fits the target at `dim` on all observed edges (`fold = None`) or with
/// fold `k` held out, and predicts every pair.
pub fn fit_target(
    dataset: &MultilayerDataset,
    cfg: &TransferMaConfig,
    folds: &FoldAssignment,
    dim: usize,
    fold: Option<usize>,
) -> Result<(MeanMatrix, FitRecord)> {
    let target = dataset.target();
    let family = dataset.family(0);
    let training;
    let layer = match fold {
        None => target,
        Some(k) => {
            training = target.restrict(|e| folds.fold_of(e) != Some(k));
            &training
        }
    };
    let opts = cfg.fit_options.with_rng(task_stream(cfg.seed, 0, dim, fold));
    let fitted = fit(layer, family, dim, &opts)?;
    let provenance = Provenance { layer: 0, dim, fold };
    let means = SymMatrix::from_fn(dataset.n(), |i, j| family.mean(fitted.params.theta(i, j)));
    Ok((
        MeanMatrix { means, provenance },
        FitRecord {
            provenance,
            objective: fitted.objective,
            iterations: fitted.iterations,
            converged: fitted.converged,
        },
    ))
}

/// Request for all candidate fits of auxiliary `layer`, asking for means on
/// every pair (the target's observed and unobserved edges together).
pub fn layer_request(dataset: &MultilayerDataset, cfg: &TransferMaConfig, layer: usize) -> FitRequest {
    let source = match &cfg.execution {
        Execution::Workers(WorkerCommand {
            layer_file: Some(path), ..
        }) => LayerSource::File {
            path: path.clone(),
            layer,
        },
        _ => LayerSource::Inline(dataset.layer(layer).clone()),
    };
    FitRequest {
        layer,
        family: dataset.family(layer),
        dims: cfg.candidate_dims.clone(),
        seed: cfg.seed,
        fit_options: cfg.fit_options,
        source,
        edges: all_pairs(dataset.n()).collect(),
    }
}

/// Runs the fits of one layer locally or in a worker process. Worker
/// failures are retried once when retriable.
pub fn dispatch_layer_fit(request: &FitRequest, execution: &Execution) -> Result<WorkerReply> {
    match execution {
        Execution::InProcess => handle_fit_request(request, &mut || {}),
        Execution::Workers(cmd) => match request_from_worker(cmd, request) {
            Err(Error::Dispatch { retriable: true, .. }) => request_from_worker(cmd, request),
            other => other,
        },
    }
}

/// Worker-side computation of a [`WorkerReply`]. `progress` is called after
/// each candidate dimension.
pub fn handle_fit_request(request: &FitRequest, progress: &mut dyn FnMut()) -> Result<WorkerReply> {
    let loaded;
    let layer: &LayerData = match &request.source {
        LayerSource::Inline(layer) => layer,
        LayerSource::File { path, layer } => {
            let dataset = crate::io::read_dataset(path)?;
            if *layer >= dataset.num_layers() {
                return Err(Error::invalid(format!(
                    "{} has {} layers, layer {} requested",
                    path.display(),
                    dataset.num_layers(),
                    layer + 1
                )));
            }
            if dataset.family(*layer) != request.family {
                return Err(Error::invalid(format!(
                    "layer {} of {} is {}, request says {}",
                    layer + 1,
                    path.display(),
                    dataset.family(*layer),
                    request.family
                )));
            }
            loaded = dataset.layers()[*layer].clone();
            &loaded
        }
    };
    let n = layer.n();
    if let Some(e) = request.edges.iter().find(|e| e.j() >= n) {
        return Err(Error::invalid(format!("requested edge {e} is outside the {n}-node layer")));
    }
    let family: EdgeFamily = request.family;
    let mut candidates = Vec::with_capacity(request.dims.len());
    for (completed, &dim) in request.dims.iter().enumerate() {
        let opts = request
            .fit_options
            .with_rng(task_stream(request.seed, request.layer, dim, None));
        let fitted = fit(layer, family, dim, &opts).map_err(|source| Error::CandidateFit {
            layer: request.layer,
            dim,
            fold: None,
            completed,
            source: Box::new(source),
        })?;
        let p = &fitted.params;
        candidates.push(CandidateReply {
            dim,
            objective: fitted.objective,
            iterations: fitted.iterations,
            converged: fitted.converged,
            means: request.edges.iter().map(|e| family.mean(p.theta(e.i(), e.j()))).collect(),
        });
        progress();
    }
    Ok(WorkerReply {
        layer: request.layer,
        edges: request.edges.clone(),
        candidates,
    })
}

/// Worker main loop: answers requests from `input` on `output` until the
/// input stream ends.
pub fn serve(input: impl Read, output: impl Write) -> Result<()> {
    let mut input = BufReader::new(input);
    let mut output = BufWriter::new(output);
    let send = |out: &mut BufWriter<_>, msg: &Message| {
        write_message(out, msg).map_err(|e| Error::Protocol(format!("write failed: {e}")))
    };
    loop {
        let msg = match read_message(&mut input) {
            Ok(Some(msg)) => msg,
            Ok(None) => return Ok(()),
            Err(e) => {
                let reply = Message::Error(ErrorReply {
                    layer: 0,
                    retriable: false,
                    message: e.to_string(),
                });
                send(&mut output, &reply)?;
                return Err(e);
            }
        };
        match msg {
            Message::FitRequest(request) => {
                send(&mut output, &Message::Heartbeat)?;
                let mut heartbeat_error = None;
                let outcome = handle_fit_request(&request, &mut || {
                    if let Err(e) = send(&mut output, &Message::Heartbeat) {
                        heartbeat_error.get_or_insert(e);
                    }
                });
                if let Some(e) = heartbeat_error {
                    return Err(e);
                }
                let reply = match outcome {
                    Ok(reply) => Message::FitReply(reply),
                    Err(e) => Message::Error(ErrorReply {
                        layer: request.layer,
                        retriable: false,
                        message: e.to_string(),
                    }),
                };
                send(&mut output, &reply)?;
            }
            Message::Heartbeat => send(&mut output, &Message::Heartbeat)?,
            Message::FitReply(_) | Message::Error(_) => {
                send(
                    &mut output,
                    &Message::Error(ErrorReply {
                        layer: 0,
                        retriable: false,
                        message: "workers only accept fit requests".into(),
                    }),
                )?;
            }
        }
    }
}

fn request_from_worker(cmd: &WorkerCommand, request: &FitRequest) -> Result<WorkerReply> {
    let layer = request.layer;
    let dispatch = |message: String, retriable: bool| Error::Dispatch {
        layer,
        message,
        retriable,
    };
    let mut child = Command::new(&cmd.program)
        .args(&cmd.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| dispatch(format!("cannot start {}: {e}", cmd.program.display()), true))?;
    let guard = ChildGuard(Some(&mut child));
    let result = exchange(guard, request, cmd.timeout, &dispatch);
    result.and_then(|reply| check_reply(request, reply).map_err(|e| dispatch(e.to_string(), false)))
}

/// Kills the worker unless it was reaped normally.
struct ChildGuard<'a>(Option<&'a mut Child>);

impl Drop for ChildGuard<'_> {
    fn drop(&mut self) {
        if let Some(child) = self.0.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn exchange(
    mut guard: ChildGuard<'_>,
    request: &FitRequest,
    timeout: Duration,
    dispatch: &dyn Fn(String, bool) -> Error,
) -> Result<WorkerReply> {
    let child = guard.0.as_mut().expect("child present");
    let mut stdin = child.stdin.take().expect("piped stdin");
    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel();
    let reader = std::thread::spawn(move || {
        let mut stdout = BufReader::new(stdout);
        loop {
            let msg = read_message(&mut stdout);
            let more = matches!(msg, Ok(Some(Message::Heartbeat)));
            if tx.send(msg).is_err() || !more {
                break;
            }
        }
    });
    let written = write_message(&mut stdin, &Message::FitRequest(request.clone()));
    drop(stdin);
    if let Err(e) = written {
        return Err(dispatch(format!("cannot send request: {e}"), true));
    }
    let outcome = loop {
        match rx.recv_timeout(timeout) {
            Ok(Ok(Some(Message::Heartbeat))) => continue,
            Ok(Ok(Some(Message::FitReply(reply)))) => break Ok(reply),
            Ok(Ok(Some(Message::Error(e)))) => break Err(dispatch(e.message, e.retriable)),
            Ok(Ok(Some(Message::FitRequest(_)))) => {
                break Err(dispatch("worker sent a fit request".into(), false))
            }
            Ok(Ok(None)) => break Err(dispatch("worker exited without replying".into(), true)),
            Ok(Err(e)) => break Err(dispatch(e.to_string(), true)),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                break Err(dispatch(format!("no message within {timeout:?}"), true))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                break Err(dispatch("worker output closed".into(), true))
            }
        }
    };
    if outcome.is_ok() {
        let child = guard.0.take().expect("child present");
        let _ = child.wait();
    }
    drop(guard);
    let _ = reader.join();
    outcome
}

fn check_reply(request: &FitRequest, reply: WorkerReply) -> Result<WorkerReply> {
    if reply.layer != request.layer {
        return Err(Error::Protocol(format!(
            "reply is for layer {}, expected {}",
            reply.layer, request.layer
        )));
    }
    if reply.edges != request.edges {
        return Err(Error::Protocol("reply edges differ from the requested edges".into()));
    }
    let dims: Vec<usize> = reply.candidates.iter().map(|c| c.dim).collect();
    if dims != request.dims {
        return Err(Error::Protocol("reply dimensions differ from the request".into()));
    }
    if reply.candidates.iter().any(|c| c.means.len() != request.edges.len()) {
        return Err(Error::Protocol("reply has the wrong number of means".into()));
    }
    Ok(reply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::SimScenario;

    fn small_dataset() -> MultilayerDataset {
        SimScenario::example1(30, 3, 1.0, EdgeFamily::GaussianIdentity, 5)
            .generate(0)
            .unwrap()
            .0
    }

    #[test]
    fn config_validation() {
        let ds = small_dataset();
        assert!(TransferMaConfig::new(vec![1, 2], 5, 1).validate(&ds).is_ok());
        assert!(TransferMaConfig::new(vec![], 5, 1).validate(&ds).is_err());
        assert!(TransferMaConfig::new(vec![2, 2], 5, 1).validate(&ds).is_err());
        assert!(TransferMaConfig::new(vec![0, 1], 5, 1).validate(&ds).is_err());
        assert!(TransferMaConfig::new(vec![1], 1, 1).validate(&ds).is_err());
        assert!(TransferMaConfig::new(vec![1], 100_000, 1).validate(&ds).is_err());
    }

    #[test]
    fn result_shape_and_provenance() {
        let ds = small_dataset();
        let cfg = TransferMaConfig::new(vec![1, 2], 5, 3);
        let res = run_transfer_ma(&ds, &cfg).unwrap();
        assert_eq!(res.weights.len(), 3 * 2);
        assert!(res.weights.is_feasible(1e-9));
        let missing: Vec<EdgeId> = ds.target().missing();
        assert_eq!(res.predictions.keys().copied().collect::<Vec<_>>(), missing);
        assert!(res.diagnostics.prediction_sources.iter().all(|p| p.fold.is_none()));
        assert_eq!(res.diagnostics.fits.len(), 2 + 2 * 5 + 2 * 2);
        assert_eq!(res.diagnostics.fold_sizes.iter().sum::<usize>(), ds.target().len());
    }

    #[test]
    fn single_candidate_reduces_to_target_fit() {
        let ds = small_dataset().select_layers(&[0]).unwrap();
        let cfg = TransferMaConfig::new(vec![2], 4, 8);
        let res = run_transfer_ma(&ds, &cfg).unwrap();
        assert_eq!(res.weights.w, vec![1.0]);
        let folds = target_folds(&ds, &cfg).unwrap();
        let (full, _) = fit_target(&ds, &cfg, &folds, 2, None).unwrap();
        for (e, v) in &res.predictions {
            assert_eq!(*v, full.means.get(*e));
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let ds = small_dataset();
        let mut cfg = TransferMaConfig::new(vec![1, 2], 3, 11);
        cfg.threads = 1;
        let a = run_transfer_ma(&ds, &cfg).unwrap();
        cfg.threads = 3;
        let b = run_transfer_ma(&ds, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.cv_value.to_bits(), b.cv_value.to_bits());
    }

    #[test]
    fn refolding_matches_a_fresh_run() {
        let ds = small_dataset();
        let cfg5 = TransferMaConfig::new(vec![1, 2], 5, 21);
        let folds5 = target_folds(&ds, &cfg5).unwrap();
        let base = compute_candidates(&ds, &cfg5, &folds5).unwrap();
        let cfg3 = TransferMaConfig { k: 3, ..cfg5.clone() };
        let folds3 = target_folds(&ds, &cfg3).unwrap();
        let refolded = refold_candidates(&ds, &cfg3, &folds3, &base).unwrap();
        let fresh = compute_candidates(&ds, &cfg3, &folds3).unwrap();
        assert_eq!(refolded.predictions, fresh.predictions);
        let a = run_with_candidates(&ds, &refolded.predictions, &folds3, &cfg3.solver).unwrap();
        let b = run_transfer_ma(&ds, &cfg3).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn serve_answers_requests_and_stops_at_eof() {
        let ds = small_dataset();
        let cfg = TransferMaConfig::new(vec![1], 3, 2);
        let request = layer_request(&ds, &cfg, 1);
        let input = Message::FitRequest(request.clone()).encode();
        let mut out = Vec::new();
        serve(&input[..], &mut out).unwrap();
        let mut cursor = std::io::Cursor::new(out);
        let mut msgs = Vec::new();
        while let Some(m) = read_message(&mut cursor).unwrap() {
            msgs.push(m);
        }
        assert!(matches!(msgs[0], Message::Heartbeat));
        let Some(Message::FitReply(reply)) = msgs.last() else { panic!("no reply") };
        assert_eq!(*reply, handle_fit_request(&request, &mut || {}).unwrap());
    }

    #[test]
    fn worker_errors_are_reported() {
        let mut out = Vec::new();
        let frame = Message::Error(ErrorReply {
            layer: 0,
            retriable: false,
            message: "x".into(),
        })
        .encode();
        serve(&frame[..], &mut out).unwrap();
        let reply = read_message(&mut std::io::Cursor::new(out)).unwrap().unwrap();
        assert!(matches!(reply, Message::Error(_)));
    }

    #[test]
    fn missing_worker_program_is_a_dispatch_error() {
        let ds = small_dataset();
        let mut cfg = TransferMaConfig::new(vec![1], 3, 2);
        cfg.execution = Execution::Workers(WorkerCommand::new("/nonexistent/transferma-worker"));
        let err = run_transfer_ma(&ds, &cfg).unwrap_err();
        assert!(matches!(err, Error::Dispatch { layer: 1, retriable: true, .. }), "{err}");
    }
}
