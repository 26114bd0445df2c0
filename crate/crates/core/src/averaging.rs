//! Cross-validated model averaging weights.
//!
//! Candidate `(r, m)` is the fit of layer `r` at latent dimension `d_(m)`.
//! The target layer's observed edges are split into `K` folds; each target
//! candidate is refitted with one fold held out, while auxiliary candidates
//! are used as fitted on their full data. The weights minimize the held-out
//! squared error over the probability simplex.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, MultilayerDataset, SymMatrix};
use crate::lsm::Provenance;
use crate::rng::RngStream;

/// Candidate identity: layer index (0 = target) and latent dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateId {
    pub layer: usize,
    pub dim: usize,
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(layer {}, d = {})", self.layer, self.dim)
    }
}

/// Random balanced partition of the target layer's observed edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    folds: BTreeMap<EdgeId, usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Zero-based fold of `e`, if `e` is in the domain.
    pub fn fold_of(&self, e: EdgeId) -> Option<usize> {
        self.folds.get(&e).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<EdgeId> {
        self.folds.iter().filter(|(_, &f)| f == fold).map(|(&e, _)| e).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn domain(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.folds.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

/// Splits `observed` into `k` groups whose sizes differ by at most one.
pub fn make_folds(observed: &BTreeSet<EdgeId>, k: usize, rng: &RngStream) -> Result<FoldAssignment> {
    if k < 2 || k > observed.len() {
        return Err(Error::invalid(format!(
            "fold count {k} must satisfy 1 < K <= {}",
            observed.len()
        )));
    }
    let mut order: Vec<EdgeId> = observed.iter().copied().collect();
    order.shuffle(&mut rng.rng());
    let folds = order.into_iter().enumerate().map(|(pos, e)| (e, pos % k)).collect();
    Ok(FoldAssignment { k, folds })
}

/// A fitted mean matrix `b′(Θ̂)` with its provenance. Entries that were not
/// supplied (e.g. pairs a worker was not asked about) are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanMatrix {
    pub means: SymMatrix,
    pub provenance: Provenance,
}

/// Full-data predictions for every candidate plus the target's fold refits.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePredictions {
    dims: Vec<usize>,
    layers: usize,
    k: usize,
    full: BTreeMap<(usize, usize), MeanMatrix>,
    target_folds: BTreeMap<(usize, usize), MeanMatrix>,
}

impl CandidatePredictions {
    pub fn new(layers: usize, dims: Vec<usize>, k: usize) -> Self {
        CandidatePredictions {
            dims,
            layers,
            k,
            full: BTreeMap::new(),
            target_folds: BTreeMap::new(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Candidates in weight-vector order: layer-major, then dimension.
    pub fn candidates(&self) -> Vec<CandidateId> {
        (0..self.layers)
            .flat_map(|layer| self.dims.iter().map(move |&dim| CandidateId { layer, dim }))
            .collect()
    }

    pub fn insert_full(&mut self, layer: usize, dim_index: usize, m: MeanMatrix) {
        self.full.insert((layer, dim_index), m);
    }

    pub fn insert_fold(&mut self, dim_index: usize, fold: usize, m: MeanMatrix) {
        self.target_folds.insert((dim_index, fold), m);
    }

    pub fn full(&self, layer: usize, dim_index: usize) -> Option<&MeanMatrix> {
        self.full.get(&(layer, dim_index))
    }

    pub fn fold(&self, dim_index: usize, fold: usize) -> Option<&MeanMatrix> {
        self.target_folds.get(&(dim_index, fold))
    }

    pub fn is_complete(&self) -> bool {
        let m = self.dims.len();
        self.full.len() == self.layers * m && self.target_folds.len() == m * self.k
    }

    /// Same full-data fits, no fold refits, `k` folds expected.
    pub fn refold(&self, k: usize) -> CandidatePredictions {
        CandidatePredictions {
            k,
            target_folds: BTreeMap::new(),
            ..self.clone_full()
        }
    }

    fn clone_full(&self) -> CandidatePredictions {
        CandidatePredictions {
            dims: self.dims.clone(),
            layers: self.layers,
            k: self.k,
            full: self.full.clone(),
            target_folds: BTreeMap::new(),
        }
    }

    /// Restriction to a subset of the candidate dimensions and layers.
    pub fn select(&self, layers: &[usize], dims: &[usize]) -> Result<CandidatePredictions> {
        let mut out = CandidatePredictions::new(layers.len(), dims.to_vec(), self.k);
        for (m_new, d) in dims.iter().enumerate() {
            let m_old = self
                .dims
                .iter()
                .position(|x| x == d)
                .ok_or_else(|| Error::invalid(format!("dimension {d} was not fitted")))?;
            for (r_new, &r_old) in layers.iter().enumerate() {
                if let Some(mm) = self.full.get(&(r_old, m_old)) {
                    out.full.insert((r_new, m_new), mm.clone());
                }
            }
            if layers.first() == Some(&0) {
                for k in 0..self.k {
                    if let Some(mm) = self.target_folds.get(&(m_old, k)) {
                        out.target_folds.insert((m_new, k), mm.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Full-data matrix of the `c`-th candidate in [`Self::candidates`] order.
    pub fn full_by_candidate(&self, c: usize) -> Option<&MeanMatrix> {
        let m = self.dims.len();
        self.full.get(&(c / m, c % m))
    }
}

/// `CV(w) = ‖response − design · w‖²`, one row per observed target edge.
#[derive(Debug, Clone, PartialEq)]
pub struct CvProblem {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub columns: Vec<CandidateId>,
    pub edges: Vec<EdgeId>,
}

impl CvProblem {
    pub fn cv(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (&self.response - &self.design * w).norm_squared()
    }

    /// `CV(e_j)` for every column.
    pub fn standalone_cv(&self) -> Vec<f64> {
        (0..self.design.ncols())
            .map(|j| (&self.response - self.design.column(j)).norm_squared())
            .collect()
    }
}

pub fn build_cv_problem(
    dataset: &MultilayerDataset,
    preds: &CandidatePredictions,
    folds: &FoldAssignment,
) -> Result<CvProblem> {
    let target = dataset.target();
    if folds.len() != target.len() || target.observed().any(|e| folds.fold_of(e).is_none()) {
        return Err(Error::invalid("fold assignment does not cover the target's observed edges exactly"));
    }
    if preds.num_layers() != dataset.num_layers() {
        return Err(Error::invalid(format!(
            "predictions cover {} layers, dataset has {}",
            preds.num_layers(),
            dataset.num_layers()
        )));
    }
    if folds.k() != preds.k() {
        return Err(Error::invalid("fold count differs between folds and predictions"));
    }
    let columns = preds.candidates();
    let m = preds.dims().len();
    let rows = target.len();
    let mut design = DMatrix::zeros(rows, columns.len());
    let mut response = DVector::zeros(rows);
    let mut edges = Vec::with_capacity(rows);
    for (row, (e, a)) in target.iter().enumerate() {
        let k = folds.fold_of(e).expect("checked above");
        response[row] = a;
        edges.push(e);
        for (c, cand) in columns.iter().enumerate() {
            let source = if cand.layer == 0 {
                preds.fold(c % m, k)
            } else {
                preds.full_by_candidate(c)
            };
            let mm = source.ok_or_else(|| {
                Error::IncompleteInput(format!("no predictions for candidate {cand} (fold {})", k + 1))
            })?;
            let v = mm.means.get(e);
            if !v.is_finite() {
                return Err(Error::IncompleteInput(format!("candidate {cand} has no prediction for edge {e}")));
            }
            design[(row, c)] = v;
        }
    }
    Ok(CvProblem { design, response, columns, edges })
}

/// A point of the probability simplex, indexed by candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub index: Vec<CandidateId>,
}

impl WeightVector {
    pub fn uniform(index: Vec<CandidateId>) -> Self {
        let k = index.len();
        WeightVector {
            w: vec![1.0 / k as f64; k],
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn get(&self, c: CandidateId) -> Option<f64> {
        self.index.iter().position(|&x| x == c).map(|p| self.w[p])
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.w.iter().all(|&v| v >= 0.0) && (self.w.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Euclidean projection onto `{w ≥ 0, Σ w = 1}` (sort and threshold).
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - tau).max(0.0)).collect();
    // Remove the rounding residue: the largest entry takes up the slack, so
    // a single-entry support is exactly 1.
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w.iter_mut().for_each(|x| *x /= sum);
    }
    settle_on_simplex(&mut w);
    w
}

/// Clears negative rounding noise and lets the largest entry absorb the
/// remaining slack, so `Σ w` is 1 up to one rounding.
fn settle_on_simplex(w: &mut [f64]) {
    w.iter_mut().for_each(|x| *x = x.max(0.0));
    let Some(top) = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a))) else {
        return;
    };
    let rest: f64 = w.iter().enumerate().filter(|&(k, _)| k != top).map(|(_, x)| x).sum();
    w[top] = (1.0 - rest).max(0.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative KKT/objective tolerance, scaled by `‖y‖²`.
    pub tol: f64,
    pub max_iters: usize,
    /// Finish with an exact active-set solve on the detected support.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iters: 20_000,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub weights: WeightVector,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

pub fn solve_weights(problem: &CvProblem, tol: f64) -> Result<WeightVector> {
    let opts = SolverOptions { tol, ..SolverOptions::default() };
    Ok(solve_weights_with(problem, &opts)?.weights)
}

pub fn solve_weights_with(problem: &CvProblem, opts: &SolverOptions) -> Result<WeightSolution> {
    if problem.design.nrows() == 0 {
        return Err(Error::invalid("weight problem has no rows"));
    }
    let p = problem.design.ncols();
    if p == 0 {
        return Err(Error::invalid("weight problem has no candidates"));
    }
    let qp = SimplexQp::new(problem);
    let (mut w, iterations) = qp.accelerated(opts);
    if opts.polish {
        if let Some(polished) = qp.active_set(&w) {
            if qp.objective(&polished) <= qp.objective(&w) + 1e-15 * qp.scale {
                w = polished;
            }
        }
    }
    settle_on_simplex(&mut w);
    let kkt = qp.kkt_residual(&w);
    let weights = WeightVector {
        w,
        index: problem.columns.clone(),
    };
    if !(kkt <= opts.tol) {
        return Err(Error::SolverFailure {
            best: weights,
            kkt_residual: kkt,
        });
    }
    let objective = problem.cv(&weights.w);
    Ok(WeightSolution {
        weights,
        objective,
        kkt_residual: kkt,
        iterations,
    })
}

/// KKT residual of `w` for the ridge-augmented problem, relative to `‖y‖²`.
pub fn kkt_residual(problem: &CvProblem, w: &[f64]) -> f64 {
    SimplexQp::new(problem).kkt_residual(w)
}

/// `min wᵀHw − 2bᵀw` over the simplex with `H = PᵀP + εI`, where the ridge
/// `ε = 1e−10·‖PᵀP‖` picks the minimal-norm minimizer among ties.
struct SimplexQp {
    h: DMatrix<f64>,
    b: DVector<f64>,
    yy: f64,
    scale: f64,
    lipschitz: f64,
}

impl SimplexQp {
    fn new(problem: &CvProblem) -> Self {
        let pt = problem.design.transpose();
        let mut h = &pt * &problem.design;
        let b = &pt * &problem.response;
        let yy = problem.response.norm_squared();
        let top = SymmetricEigen::new(h.clone()).eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
        let ridge = if top > 0.0 { 1e-10 * top } else { 1.0 };
        for j in 0..h.ncols() {
            h[(j, j)] += ridge;
        }
        SimplexQp {
            h,
            b,
            yy,
            scale: yy.max(f64::MIN_POSITIVE),
            lipschitz: 2.0 * (top + ridge),
        }
    }

    fn objective(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (w.transpose() * &self.h * &w)[(0, 0)] - 2.0 * self.b.dot(&w) + self.yy
    }

    fn gradient(&self, w: &[f64]) -> DVector<f64> {
        let w = DVector::from_column_slice(w);
        2.0 * (&self.h * w - &self.b)
    }

    fn kkt_residual(&self, w: &[f64]) -> f64 {
        let g = self.gradient(w);
        let support: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
        if support.is_empty() {
            return f64::INFINITY;
        }
        let mu = support.iter().map(|&j| g[j]).sum::<f64>() / support.len() as f64;
        let mut worst = 0.0f64;
        for j in 0..w.len() {
            let dev = if w[j] > 0.0 { (g[j] - mu).abs() } else { (mu - g[j]).max(0.0) };
            worst = worst.max(dev);
        }
        let feas = (w.iter().sum::<f64>() - 1.0).abs() + w.iter().map(|v| (-v).max(0.0)).sum::<f64>();
        worst / self.scale + feas
    }

    /// FISTA with function-value restarts.
    fn accelerated(&self, opts: &SolverOptions) -> (Vec<f64>, usize) {
        let p = self.b.len();
        let mut w = vec![1.0 / p as f64; p];
        if p == 1 {
            return (w, 0);
        }
        let mut prev = w.clone();
        let mut f = self.objective(&w);
        let mut t = 1.0f64;
        let step = 1.0 / self.lipschitz;
        let mut iters = 0;
        while iters < opts.max_iters {
            iters += 1;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            let y: Vec<f64> = (0..p).map(|j| w[j] + beta * (w[j] - prev[j])).collect();
            let g = self.gradient(&y);
            let cand: Vec<f64> = (0..p).map(|j| y[j] - step * g[j]).collect();
            let next = simplex_project(&cand);
            let f_next = self.objective(&next);
            if f_next > f {
                // Restart momentum from the current iterate.
                t = 1.0;
                prev = w.clone();
                continue;
            }
            prev = std::mem::replace(&mut w, next);
            f = f_next;
            t = t_next;
            if iters % 10 == 0 && self.kkt_residual(&w) <= 0.1 * opts.tol {
                break;
            }
        }
        (w, iters)
    }

    /// Primal active-set method started from the feasible point `start`.
    fn active_set(&self, start: &[f64]) -> Option<Vec<f64>> {
        let p = start.len();
        let mut w = start.to_vec();
        let mut support: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();
        for _ in 0..(50 + 10 * p) {
            let idx: Vec<usize> = (0..p).filter(|&j| support[j]).collect();
            let s = idx.len();
            let mut kkt = DMatrix::zeros(s + 1, s + 1);
            let mut rhs = DVector::zeros(s + 1);
            for (a, &ja) in idx.iter().enumerate() {
                for (c, &jc) in idx.iter().enumerate() {
                    kkt[(a, c)] = self.h[(ja, jc)];
                }
                kkt[(a, s)] = -1.0;
                kkt[(s, a)] = 1.0;
                rhs[a] = self.b[ja];
            }
            rhs[s] = 1.0;
            let sol = kkt.lu().solve(&rhs)?;
            let z: Vec<f64> = idx.iter().enumerate().map(|(a, _)| sol[a]).collect();
            if z.iter().all(|&v| v >= 0.0) {
                for j in 0..p {
                    w[j] = 0.0;
                }
                for (a, &j) in idx.iter().enumerate() {
                    w[j] = z[a];
                }
                let mu = sol[s];
                let hw = &self.h * DVector::from_column_slice(&w) - &self.b;
                let entering = (0..p)
                    .filter(|&j| !support[j])
                    .map(|j| (j, hw[j] - mu))
                    .filter(|&(_, v)| v < -1e-14 * self.scale)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                match entering {
                    Some((j, _)) => support[j] = true,
                    None => return Some(w),
                }
            } else {
                // Step toward z until the first support coordinate hits zero.
                let mut t = 1.0f64;
                for (a, &j) in idx.iter().enumerate() {
                    if z[a] < 0.0 {
                        t = t.min(w[j] / (w[j] - z[a]));
                    }
                }
                for (a, &j) in idx.iter().enumerate() {
                    w[j] += t * (z[a] - w[j]);
                    if w[j] <= 1e-300 || (z[a] < 0.0 && w[j] <= 1e-15) {
                        w[j] = 0.0;
                        support[j] = false;
                    }
                }
                let total: f64 = w.iter().sum();
                if total <= 0.0 {
                    return None;
                }
                w.iter_mut().for_each(|v| *v /= total);
            }
        }
        None
    }
}

/// `Σ_c w_c · b′(Θ̂_c)[e]` using every candidate's full-data fit.
pub fn predict_averaged(
    w: &WeightVector,
    preds: &CandidatePredictions,
    edges: &[EdgeId],
) -> Result<BTreeMap<EdgeId, f64>> {
    let columns = preds.candidates();
    if columns != w.index {
        return Err(Error::invalid("weight vector does not match the candidate set"));
    }
    let mats: Vec<&MeanMatrix> = (0..columns.len())
        .map(|c| {
            preds
                .full_by_candidate(c)
                .ok_or_else(|| Error::IncompleteInput(format!("no full fit for candidate {}", columns[c])))
        })
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for &e in edges {
        let mut s = 0.0;
        for (c, mm) in mats.iter().enumerate() {
            if w.w[c] != 0.0 {
                s += w.w[c] * mm.means.get(e);
            }
        }
        out.insert(e, s);
    }
    Ok(out)
}
