//! Replicated simulation studies: every method evaluated on the same
//! generated datasets, and the figure sweeps built from them.
//!
//! Within one replicate, candidate fits are shared wherever the methods
//! allow: the full-data fits for the union of candidate dimensions serve
//! every dimension set, every `K`, the simple average and the target-only
//! baseline (whose fit is the pipeline's full target fit).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::{CandidateId, SolverOptions, WeightVector};
use crate::error::{Error, Result};
use crate::eval::{fit_fmlsm, simp_ma, smpr, summarize, weight_diagnostics, MetricKind, MetricReport, Summary};
use crate::family::EdgeFamily;
use crate::lsm::{FitOptions, Init};
use crate::pipeline::{compute_candidates, refold_candidates, run_with_candidates, target_folds, TransferMaConfig};
use crate::rng::{Purpose, RngStream, StreamId};
use crate::simgen::{Example, SimScenario};

/// What to evaluate on each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    /// Candidate sets for Transfer-MA (and the simple average).
    pub dim_sets: Vec<Vec<usize>>,
    pub k_values: Vec<usize>,
    pub simple_average: bool,
    pub target_only_dims: Vec<usize>,
    pub fmlsm_dims: Vec<usize>,
    pub fit_options: FitOptions,
    pub solver: SolverOptions,
}

/// Fit options used by the studies: defaults with the spectral warm start.
pub fn study_fit_options() -> FitOptions {
    FitOptions {
        init: Init::SpectralWarmStart,
        ..FitOptions::default()
    }
}

impl EvalPlan {
    /// All four methods at one candidate set and one `K`.
    pub fn compare(dims: Vec<usize>, k: usize) -> Self {
        EvalPlan {
            target_only_dims: dims.clone(),
            fmlsm_dims: dims.clone(),
            dim_sets: vec![dims],
            k_values: vec![k],
            simple_average: true,
            fit_options: study_fit_options(),
            solver: SolverOptions::default(),
        }
    }

    /// Transfer-MA only.
    pub fn transfer_only(dims: Vec<usize>, k_values: Vec<usize>) -> Self {
        EvalPlan {
            dim_sets: vec![dims],
            k_values,
            simple_average: false,
            target_only_dims: Vec::new(),
            fmlsm_dims: Vec::new(),
            fit_options: study_fit_options(),
            solver: SolverOptions::default(),
        }
    }

    fn union_dims(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .dim_sets
            .iter()
            .flatten()
            .chain(&self.target_only_dims)
            .copied()
            .collect();
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_sets.is_empty() && self.target_only_dims.is_empty() && self.fmlsm_dims.is_empty() {
            return Err(Error::invalid("evaluation plan has no methods"));
        }
        if !self.dim_sets.is_empty() && self.k_values.is_empty() {
            return Err(Error::invalid("evaluation plan has candidate sets but no K"));
        }
        for set in &self.dim_sets {
            if set.is_empty() || set[0] == 0 || set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("bad candidate set {set:?}")));
            }
        }
        if self.target_only_dims.iter().chain(&self.fmlsm_dims).any(|&d| d == 0) {
            return Err(Error::invalid("latent dimensions must be positive"));
        }
        Ok(())
    }
}

fn set_label(dims: &[usize]) -> String {
    let inner: Vec<String> = dims.iter().map(usize::to_string).collect();
    format!("{{{}}}", inner.join(","))
}

pub fn transfer_ma_label(dims: &[usize], k: usize) -> String {
    format!("Transfer-MA M={} K={k}", set_label(dims))
}

pub fn simple_average_label(dims: &[usize]) -> String {
    format!("Transfer-SimpMA M={}", set_label(dims))
}

pub fn target_only_label(d: usize) -> String {
    format!("Target-Only d={d}")
}

pub fn fmlsm_label(d: usize) -> String {
    format!("FMLSM d={d}")
}

/// Everything measured on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: u32,
    /// SMPR of the target layer, by method label.
    pub smpr: BTreeMap<String, f64>,
    /// Transfer-MA weights, by method label.
    pub weights: BTreeMap<String, WeightVector>,
}

/// Pipeline seed of replicate `replicate` of a scenario seeded with `seed`.
pub fn replicate_seed(seed: u64, replicate: u32) -> u64 {
    RngStream::new(seed, StreamId::new(Purpose::Fit).replicate(replicate))
        .rng()
        .next_u64()
}

/// Generates replicate `replicate` of `scenario` and evaluates `plan` on it.
pub fn evaluate_replicate(scenario: &SimScenario, replicate: u32, plan: &EvalPlan) -> Result<ReplicateOutcome> {
    plan.validate()?;
    let (dataset, truth) = scenario.generate(replicate)?;
    let truth_mean = &truth.mean_star[0];
    let missing = dataset.target().missing();
    let seed = replicate_seed(scenario.seed, replicate);
    let mut out = ReplicateOutcome {
        replicate,
        smpr: BTreeMap::new(),
        weights: BTreeMap::new(),
    };

    let union = plan.union_dims();
    if !union.is_empty() {
        let k0 = plan.k_values.first().copied().unwrap_or(2);
        let mut cfg = TransferMaConfig::new(union.clone(), k0, seed);
        cfg.fit_options = plan.fit_options;
        cfg.solver = plan.solver;
        cfg.threads = 1;
        let folds = target_folds(&dataset, &cfg)?;
        let base = compute_candidates(&dataset, &cfg, &folds)?;
        let all_layers: Vec<usize> = (0..dataset.num_layers()).collect();

        for (ki, &k) in plan.k_values.iter().enumerate() {
            let (cands, folds) = if ki == 0 {
                (base.clone(), folds.clone())
            } else {
                let cfg_k = TransferMaConfig { k, ..cfg.clone() };
                let folds_k = target_folds(&dataset, &cfg_k)?;
                (refold_candidates(&dataset, &cfg_k, &folds_k, &base)?, folds_k)
            };
            for dims in &plan.dim_sets {
                let preds = cands.predictions.select(&all_layers, dims)?;
                let res = run_with_candidates(&dataset, &preds, &folds, &plan.solver)?;
                let label = transfer_ma_label(dims, k);
                out.smpr.insert(label.clone(), smpr(&res.predictions, truth_mean, &missing)?);
                out.weights.insert(label, res.weights);
            }
        }
        if plan.simple_average {
            for dims in &plan.dim_sets {
                let preds = base.predictions.select(&all_layers, dims)?;
                let p = simp_ma(&preds, &missing)?;
                out.smpr.insert(simple_average_label(dims), smpr(&p, truth_mean, &missing)?);
            }
        }
        for &d in &plan.target_only_dims {
            let idx = union.iter().position(|&x| x == d).expect("union covers target-only dims");
            let full = base.predictions.full(0, idx).expect("full target fit");
            let p: BTreeMap<_, _> = missing.iter().map(|&e| (e, full.means.get(e))).collect();
            out.smpr.insert(target_only_label(d), smpr(&p, truth_mean, &missing)?);
        }
    }
    for &d in &plan.fmlsm_dims {
        let means = fit_fmlsm(&dataset, d, &plan.fit_options, seed)?;
        let p: BTreeMap<_, _> = missing.iter().map(|&e| (e, means[0].get(e))).collect();
        out.smpr.insert(fmlsm_label(d), smpr(&p, truth_mean, &missing)?);
    }
    Ok(out)
}

/// Evaluates replicates `0..replicates` on a pool of `threads` threads.
pub fn run_replicates(
    scenario: &SimScenario,
    replicates: u32,
    plan: &EvalPlan,
    threads: usize,
) -> Result<Vec<ReplicateOutcome>> {
    scenario.validate()?;
    let reps: Vec<u32> = (0..replicates).collect();
    let run = |&r: &u32| evaluate_replicate(scenario, r, plan);
    let results: Vec<Result<ReplicateOutcome>> = match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(|| reps.par_iter().map(run).collect()),
        Err(_) => reps.iter().map(run).collect(),
    };
    results.into_iter().collect()
}

/// Per-method values across replicates.
pub fn collect_metric(outcomes: &[ReplicateOutcome], method: &str) -> Vec<f64> {
    outcomes.iter().filter_map(|o| o.smpr.get(method).copied()).collect()
}

pub fn method_summary(outcomes: &[ReplicateOutcome], method: &str) -> Option<Summary> {
    summarize(&collect_metric(outcomes, method))
}

/// Metric table rows, one per method and replicate.
pub fn metric_rows(scenario: &str, outcomes: &[ReplicateOutcome]) -> Vec<MetricReport> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.smpr.iter().map(move |(method, &value)| MetricReport {
                scenario: scenario.to_string(),
                method: method.clone(),
                replicate: o.replicate,
                metric: MetricKind::Smpr,
                value,
            })
        })
        .collect()
}

/// Total weight of candidates whose layer is in `layers`, per replicate.
pub fn layer_weight_mass(outcomes: &[ReplicateOutcome], method: &str, layers: &[usize]) -> Result<Vec<f64>> {
    outcomes
        .iter()
        .map(|o| {
            let w = o
                .weights
                .get(method)
                .ok_or_else(|| Error::invalid(format!("no weights recorded for {method}")))?;
            let informative: BTreeSet<CandidateId> = w.index.iter().filter(|c| layers.contains(&c.layer)).copied().collect();
            Ok(weight_diagnostics(w, &informative, None)?.tau_hat)
        })
        .collect()
}

/// Distance of the normalized weights outside `layers` from `ideal`, per
/// replicate; replicates with no weight outside `layers` are skipped.
pub fn normalized_distance(
    outcomes: &[ReplicateOutcome],
    method: &str,
    layers: &[usize],
    ideal: &[f64],
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for o in outcomes {
        let w = o
            .weights
            .get(method)
            .ok_or_else(|| Error::invalid(format!("no weights recorded for {method}")))?;
        let informative: BTreeSet<CandidateId> = w.index.iter().filter(|c| layers.contains(&c.layer)).copied().collect();
        if let Some(d) = weight_diagnostics(w, &informative, Some(ideal))?.dist {
            out.push(d);
        }
    }
    Ok(out)
}

/// The figure sweeps of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Figure {
    /// Example 1, varying n.
    Fig1a,
    /// Example 1, varying R.
    Fig1b,
    /// Example 1, varying σ.
    Fig1c,
    /// Example 1, varying K.
    Fig1d,
    /// Example 1, varying the candidate set.
    Fig1e,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl Figure {
    pub const ALL: [Figure; 9] = [
        Figure::Fig1a,
        Figure::Fig1b,
        Figure::Fig1c,
        Figure::Fig1d,
        Figure::Fig1e,
        Figure::Fig2,
        Figure::Fig3,
        Figure::Fig4,
        Figure::Fig5,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Figure::Fig1a => "1a",
            Figure::Fig1b => "1b",
            Figure::Fig1c => "1c",
            Figure::Fig1d => "1d",
            Figure::Fig1e => "1e",
            Figure::Fig2 => "2",
            Figure::Fig3 => "3",
            Figure::Fig4 => "4",
            Figure::Fig5 => "5",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown example `{s}` (expected one of 1a 1b 1c 1d 1e 2 3 4 5)")))
    }
}

/// Settings shared by all sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub replicates: u32,
    pub seed: u64,
    pub threads: usize,
    /// Edge family for Examples 1 and 2.
    pub family: EdgeFamily,
}

/// One point of a figure: a summary of one series at one x value.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub figure: Figure,
    pub x_name: &'static str,
    pub x: String,
    pub series: String,
    pub summary: Summary,
}

pub const SERIES_HEADER: [&str; 10] = ["figure", "x_name", "x", "series", "count", "median", "q1", "q3", "min", "max"];

impl SeriesPoint {
    pub fn row(&self) -> Vec<String> {
        let s = &self.summary;
        vec![
            self.figure.id().to_string(),
            self.x_name.to_string(),
            self.x.clone(),
            self.series.clone(),
            s.count.to_string(),
            s.median.to_string(),
            s.q1.to_string(),
            s.q3.to_string(),
            s.min.to_string(),
            s.max.to_string(),
        ]
    }
}

/// Output of a sweep: summarized series and the raw metric rows.
#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub points: Vec<SeriesPoint>,
    pub metrics: Vec<MetricReport>,
}

impl SweepOutput {
    fn add_methods(&mut self, figure: Figure, x_name: &'static str, x: String, outcomes: &[ReplicateOutcome]) {
        let methods: BTreeSet<&String> = outcomes.iter().flat_map(|o| o.smpr.keys()).collect();
        for m in methods {
            if let Some(summary) = method_summary(outcomes, m) {
                self.points.push(SeriesPoint {
                    figure,
                    x_name,
                    x: x.clone(),
                    series: m.clone(),
                    summary,
                });
            }
        }
        self.metrics
            .extend(metric_rows(&format!("fig{} {x_name}={x}", figure.id()), outcomes));
    }

    fn add_series(&mut self, figure: Figure, x_name: &'static str, x: String, series: String, values: &[f64]) {
        if let Some(summary) = summarize(values) {
            self.points.push(SeriesPoint {
                figure,
                x_name,
                x,
                series,
                summary,
            });
        }
    }
}

/// Runs the sweep behind one figure.
pub fn run_figure(figure: Figure, opts: &SweepOptions) -> Result<SweepOutput> {
    let mut out = SweepOutput::default();
    let fam = opts.family;
    let reps = opts.replicates;
    let ex1 = |n: usize, r: usize, sigma: f64| SimScenario::example1(n, r, sigma, fam, opts.seed);
    match figure {
        Figure::Fig1a => {
            for n in [160, 180, 200, 220, 240] {
                let o = run_replicates(&ex1(n, 4, 3.0), reps, &EvalPlan::compare(vec![2], 10), opts.threads)?;
                out.add_methods(figure, "n", n.to_string(), &o);
            }
        }
        Figure::Fig1b => {
            for r in [4, 5, 6, 7, 8] {
                let o = run_replicates(&ex1(200, r, 3.0), reps, &EvalPlan::compare(vec![2], 10), opts.threads)?;
                out.add_methods(figure, "R", r.to_string(), &o);
            }
        }
        Figure::Fig1c => {
            for sigma in [0.0, 1.0, 2.0, 3.0, 4.0, 5.0] {
                let o = run_replicates(&ex1(200, 4, sigma), reps, &EvalPlan::compare(vec![2], 10), opts.threads)?;
                out.add_methods(figure, "sigma", sigma.to_string(), &o);
            }
        }
        Figure::Fig1d => {
            let ks = vec![5, 10, 20, 50, 100];
            let o = run_replicates(&ex1(200, 4, 3.0), reps, &EvalPlan::transfer_only(vec![2], ks.clone()), opts.threads)?;
            for k in ks {
                let values = collect_metric(&o, &transfer_ma_label(&[2], k));
                out.add_series(figure, "K", k.to_string(), "Transfer-MA".into(), &values);
            }
            out.metrics.extend(metric_rows("fig1d", &o));
        }
        Figure::Fig1e | Figure::Fig2 | Figure::Fig5 => {
            let (scenario, singles, all) = match figure {
                Figure::Fig1e => (ex1(200, 4, 3.0), vec![1, 2, 3], vec![1, 2, 3]),
                Figure::Fig2 => (
                    SimScenario::example2(200, vec![3, 1, 2, 4], fam, opts.seed),
                    vec![1, 2, 3, 4, 5],
                    vec![1, 2, 3, 4, 5],
                ),
                _ => (SimScenario::example5(200, 4, 3.0, opts.seed), vec![1, 2, 3], vec![1, 2, 3]),
            };
            let mut dim_sets: Vec<Vec<usize>> = singles.iter().map(|&d| vec![d]).collect();
            dim_sets.push(all);
            let plan = EvalPlan {
                dim_sets,
                target_only_dims: singles.clone(),
                fmlsm_dims: singles,
                ..EvalPlan::compare(vec![1], 10)
            };
            let o = run_replicates(&scenario, reps, &plan, opts.threads)?;
            out.add_methods(figure, "example", scenario.example.to_string(), &o);
        }
        Figure::Fig3 | Figure::Fig4 => {
            for n in [200, 300, 400] {
                let (scenario, x) = if figure == Figure::Fig3 {
                    (SimScenario::example3(n, opts.seed), n.to_string())
                } else {
                    (SimScenario::example4(n, opts.seed), n.to_string())
                };
                let layers = scenario.layers;
                let o = run_replicates(&scenario, reps, &EvalPlan::transfer_only(vec![2], vec![10]), opts.threads)?;
                let label = transfer_ma_label(&[2], 10);
                for r in 0..layers {
                    let w = layer_weight_mass(&o, &label, &[r])?;
                    out.add_series(figure, "n", x.clone(), format!("weight layer {}", r + 1), &w);
                }
                if figure == Figure::Fig3 {
                    let tau = layer_weight_mass(&o, &label, &[0, 1, 2])?;
                    out.add_series(figure, "n", x.clone(), "tau_hat".into(), &tau);
                } else {
                    let dist = normalized_distance(&o, &label, &[0], &[0.5, 0.5])?;
                    out.add_series(figure, "n", x.clone(), "dist".into(), &dist);
                }
                out.add_methods(figure, "n", x, &o);
            }
        }
    }
    Ok(out)
}

/// Short scenario description used in tables.
pub fn scenario_label(s: &SimScenario) -> String {
    match s.example {
        Example::Ex1 | Example::Ex5 => format!("{} n={} R={} sigma={} {}", s.example, s.n, s.layers, s.sigma, s.family),
        Example::Ex2 => format!("{} n={} dims={:?} {}", s.example, s.n, s.dims, s.family),
        Example::Ex3 | Example::Ex4 => format!("{} n={}", s.example, s.n),
    }
}
