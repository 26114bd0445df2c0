//! Inner-product latent space model
//! `Θ_ij = α_i + α_j + U_iᵀ Λ U_j` with diagonal `Λ`, fitted by projected
//! gradient descent on the observed-edge negative log-likelihood.
//!
//! The fitter works on one or more layers that share the latent positions
//! `U` (one layer is the ordinary single-layer model; several layers give the
//! shared-U multilayer model used as a baseline). Each iteration takes a
//! block-diagonally preconditioned gradient step on `(α, U, diag Λ)` with an
//! Armijo backtracking search, then projects: the columns of `U` are centered
//! and rescaled to unit mean square. Both projections leave every `Θ_ij`
//! unchanged (the centering shift is absorbed into `α`, the rescaling into
//! `Λ`), so the objective is monotone across accepted steps.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::EdgeFamily;
use crate::graph::{LayerData, SymMatrix};
use crate::rng::{Purpose, RngStream, StreamId};

/// Parameters of one layer's model.
#[derive(Debug, Clone, PartialEq)]
pub struct LsmParams {
    /// Degree heterogeneity, length `n`.
    pub alpha: DVector<f64>,
    /// Latent positions, `n × d`.
    pub u: DMatrix<f64>,
    /// Diagonal of the connection matrix, length `d`.
    pub lambda: DVector<f64>,
}

impl LsmParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        LsmParams {
            alpha: DVector::zeros(n),
            u: DMatrix::zeros(n, d),
            lambda: DVector::zeros(d),
        }
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn d(&self) -> usize {
        self.lambda.len()
    }

    fn check(&self) -> Result<()> {
        let (n, d) = (self.n(), self.d());
        if d == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        if self.u.nrows() != n || self.u.ncols() != d {
            return Err(Error::invalid(format!(
                "U is {}×{}, expected {n}×{d}",
                self.u.nrows(),
                self.u.ncols()
            )));
        }
        let finite = self.alpha.iter().chain(self.u.iter()).chain(self.lambda.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("parameters contain non-finite entries"));
        }
        Ok(())
    }

    #[inline]
    pub fn theta(&self, i: usize, j: usize) -> f64 {
        let mut s = self.alpha[i] + self.alpha[j];
        for l in 0..self.d() {
            s += self.u[(i, l)] * self.lambda[l] * self.u[(j, l)];
        }
        s
    }

    pub fn theta_matrix(&self) -> SymMatrix {
        SymMatrix::from_fn(self.n(), |i, j| self.theta(i, j))
    }

    /// Largest absolute column mean of `U`.
    pub fn max_column_mean(&self) -> f64 {
        let n = self.n().max(1) as f64;
        (0..self.d())
            .map(|l| (self.u.column(l).sum() / n).abs())
            .fold(0.0, f64::max)
    }
}

/// Where a fitted matrix came from: layer, candidate dimension and the
/// held-out fold (`None` for a fit on all observed edges).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub layer: usize,
    pub dim: usize,
    pub fold: Option<usize>,
}

/// Natural-parameter matrix of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMatrix {
    pub theta: SymMatrix,
    pub provenance: Provenance,
}

impl ThetaMatrix {
    pub fn means(&self, family: EdgeFamily) -> SymMatrix {
        self.theta.map(|t| family.mean(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    RandomGaussian,
    SpectralWarmStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub step_init: f64,
    pub backtrack_factor: f64,
    pub armijo_c: f64,
    pub init: Init,
    pub rng: RngStream,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 2000,
            rel_tol: 1e-6,
            step_init: 1.0,
            backtrack_factor: 0.5,
            armijo_c: 1e-4,
            init: Init::RandomGaussian,
            rng: RngStream::new(0, StreamId::new(Purpose::Fit)),
        }
    }
}

impl FitOptions {
    pub fn with_rng(mut self, rng: RngStream) -> Self {
        self.rng = rng;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol must be positive"));
        }
        if !(self.step_init > 0.0) {
            return Err(Error::invalid("step_init must be positive"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::invalid("backtrack_factor must lie in (0, 1)"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::invalid("armijo_c must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Result of a single-layer fit.
#[derive(Debug, Clone)]
pub struct LsmFit {
    pub params: LsmParams,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after every accepted step.
    pub trace: Vec<f64>,
}

/// Result of a fit with latent positions shared across layers.
#[derive(Debug, Clone)]
pub struct JointFit {
    pub alphas: Vec<DVector<f64>>,
    pub u: DMatrix<f64>,
    pub lambdas: Vec<DVector<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

impl JointFit {
    pub fn layer_params(&self, r: usize) -> LsmParams {
        LsmParams {
            alpha: self.alphas[r].clone(),
            u: self.u.clone(),
            lambda: self.lambdas[r].clone(),
        }
    }
}

/// Gradient of [`nll`] with respect to each parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct LsmGradient {
    pub alpha: DVector<f64>,
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

/// Sum of edge negative log-likelihoods over the layer's observed edges.
pub fn nll(params: &LsmParams, layer: &LayerData, family: EdgeFamily) -> Result<f64> {
    params.check()?;
    check_layer(params, layer)?;
    let problem = Problem::new(&[layer], family, params.d());
    Ok(problem.objective(&Flat::from_params(&[params]).x))
}

/// Analytic gradient of [`nll`]; the `Λ` block holds only its diagonal.
pub fn gradient(params: &LsmParams, layer: &LayerData, family: EdgeFamily) -> Result<LsmGradient> {
    params.check()?;
    check_layer(params, layer)?;
    let problem = Problem::new(&[layer], family, params.d());
    let x = Flat::from_params(&[params]).x;
    let mut g = vec![0.0; x.len()];
    problem.gradient(&x, &mut g);
    let lay = problem.layout;
    Ok(LsmGradient {
        alpha: DVector::from_column_slice(&g[lay.alpha(0)..lay.alpha(0) + lay.n]),
        u: DMatrix::from_row_slice(lay.n, lay.d, &g[lay.u()..]),
        lambda: DVector::from_column_slice(&g[lay.lambda(0)..lay.lambda(0) + lay.d]),
    })
}

/// Entrywise `b′(Θ)` over all off-diagonal pairs.
pub fn predict_means(params: &LsmParams, family: EdgeFamily) -> Result<SymMatrix> {
    params.check()?;
    Ok(SymMatrix::from_fn(params.n(), |i, j| family.mean(params.theta(i, j))))
}

/// Fits one layer at latent dimension `d`.
pub fn fit(layer: &LayerData, family: EdgeFamily, d: usize, opts: &FitOptions) -> Result<LsmFit> {
    let joint = fit_joint(&[layer], family, d, opts)?;
    Ok(LsmFit {
        params: joint.layer_params(0),
        objective: joint.objective,
        iterations: joint.iterations,
        converged: joint.converged,
        trace: joint.trace,
    })
}

/// Fits several layers that share `U` but keep their own `α` and `Λ`,
/// minimizing the summed negative log-likelihood.
pub fn fit_joint(layers: &[&LayerData], family: EdgeFamily, d: usize, opts: &FitOptions) -> Result<JointFit> {
    opts.validate()?;
    if d == 0 {
        return Err(Error::invalid("latent dimension must be at least 1"));
    }
    let first = layers.first().ok_or_else(|| Error::invalid("no layers to fit"))?;
    let n = first.n();
    if n < 2 {
        return Err(Error::invalid("a layer needs at least two nodes"));
    }
    for layer in layers {
        if layer.n() != n {
            return Err(Error::invalid("layers disagree on the node count"));
        }
        if layer.is_empty() {
            return Err(Error::invalid("cannot fit a layer with no observed edges"));
        }
        layer.validate(family)?;
    }

    let problem = Problem::new(layers, family, d);
    let mut x = problem.initialize(layers, opts);
    problem.project(&mut x, false);
    let mut f = problem.objective(&x);
    if !f.is_finite() {
        return Err(Error::NumericalFailure {
            message: "objective is not finite at the initial point".into(),
            last: None,
        });
    }

    let len = x.len();
    let mut g = vec![0.0; len];
    let mut diag = vec![0.0; len];
    let mut dir = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut trace = vec![f];
    let mut step = opts.step_init;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        problem.gradient_and_curvature(&x, &mut g, &mut diag);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(problem.failure("gradient is not finite", &x));
        }
        let mut slope = 0.0;
        for k in 0..len {
            dir[k] = -g[k] / diag[k];
            slope += g[k] * dir[k];
        }
        if slope >= 0.0 || slope.abs() < f64::MIN_POSITIVE {
            converged = true;
            break;
        }

        step = (2.0 * step).min(opts.step_init);
        let mut accepted = None;
        while step > 1e-20 {
            for k in 0..len {
                trial[k] = x[k] + step * dir[k];
            }
            problem.project(&mut trial, true);
            let ft = problem.objective(&trial);
            if ft.is_finite() && ft <= f + opts.armijo_c * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= opts.backtrack_factor;
        }
        let Some(f_new) = accepted else {
            // No decrease along a descent direction: stationary to working precision.
            converged = true;
            break;
        };
        iterations += 1;
        std::mem::swap(&mut x, &mut trial);
        let change = (f - f_new).abs();
        f = f_new;
        trace.push(f);
        if change <= opts.rel_tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let flat = Flat { x };
    let (alphas, u, lambdas) = flat.unpack(&problem.layout);
    Ok(JointFit {
        alphas,
        u,
        lambdas,
        objective: f,
        iterations,
        converged,
        trace,
    })
}

fn check_layer(params: &LsmParams, layer: &LayerData) -> Result<()> {
    if layer.n() != params.n() {
        return Err(Error::invalid(format!(
            "layer has {} nodes but parameters have {}",
            layer.n(),
            params.n()
        )));
    }
    Ok(())
}

/// Offsets into the flat parameter vector
/// `[α_0, λ_0, α_1, λ_1, …, U (row-major)]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    d: usize,
    layers: usize,
}

impl Layout {
    #[inline]
    fn alpha(&self, r: usize) -> usize {
        r * (self.n + self.d)
    }
    #[inline]
    fn lambda(&self, r: usize) -> usize {
        r * (self.n + self.d) + self.n
    }
    #[inline]
    fn u(&self) -> usize {
        self.layers * (self.n + self.d)
    }
    fn len(&self) -> usize {
        self.u() + self.n * self.d
    }
}

struct Flat {
    x: Vec<f64>,
}

impl Flat {
    fn from_params(params: &[&LsmParams]) -> Self {
        let n = params[0].n();
        let d = params[0].d();
        let lay = Layout { n, d, layers: params.len() };
        let mut x = vec![0.0; lay.len()];
        for (r, p) in params.iter().enumerate() {
            x[lay.alpha(r)..lay.alpha(r) + n].copy_from_slice(p.alpha.as_slice());
            x[lay.lambda(r)..lay.lambda(r) + d].copy_from_slice(p.lambda.as_slice());
        }
        let u = &params[0].u;
        for i in 0..n {
            for l in 0..d {
                x[lay.u() + i * d + l] = u[(i, l)];
            }
        }
        Flat { x }
    }

    fn unpack(&self, lay: &Layout) -> (Vec<DVector<f64>>, DMatrix<f64>, Vec<DVector<f64>>) {
        let (n, d) = (lay.n, lay.d);
        let alphas = (0..lay.layers)
            .map(|r| DVector::from_column_slice(&self.x[lay.alpha(r)..lay.alpha(r) + n]))
            .collect();
        let lambdas = (0..lay.layers)
            .map(|r| DVector::from_column_slice(&self.x[lay.lambda(r)..lay.lambda(r) + d]))
            .collect();
        let u = DMatrix::from_row_slice(n, d, &self.x[lay.u()..]);
        (alphas, u, lambdas)
    }
}

/// Lower limit on `b″` in the preconditioner, relative to its maximum.
const CURVATURE_FLOOR: f64 = 1e-9;

struct EdgeTable {
    i: Vec<u32>,
    j: Vec<u32>,
    a: Vec<f64>,
}

struct Problem {
    layout: Layout,
    family: EdgeFamily,
    edges: Vec<EdgeTable>,
}

impl Problem {
    fn new(layers: &[&LayerData], family: EdgeFamily, d: usize) -> Self {
        let n = layers[0].n();
        let edges = layers
            .iter()
            .map(|layer| {
                let mut t = EdgeTable {
                    i: Vec::with_capacity(layer.len()),
                    j: Vec::with_capacity(layer.len()),
                    a: Vec::with_capacity(layer.len()),
                };
                for (e, v) in layer.iter() {
                    t.i.push(e.i);
                    t.j.push(e.j);
                    t.a.push(v);
                }
                t
            })
            .collect();
        Problem {
            layout: Layout { n, d, layers: layers.len() },
            family,
            edges,
        }
    }

    #[inline]
    fn theta(&self, x: &[f64], r: usize, i: usize, j: usize) -> f64 {
        let lay = &self.layout;
        let d = lay.d;
        let lam = &x[lay.lambda(r)..lay.lambda(r) + d];
        let ui = &x[lay.u() + i * d..lay.u() + (i + 1) * d];
        let uj = &x[lay.u() + j * d..lay.u() + (j + 1) * d];
        let mut s = x[lay.alpha(r) + i] + x[lay.alpha(r) + j];
        for l in 0..d {
            s += ui[l] * lam[l] * uj[l];
        }
        s
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for (r, t) in self.edges.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..t.a.len() {
                let th = self.theta(x, r, t.i[k] as usize, t.j[k] as usize);
                acc += self.family.nll_unchecked(t.a[k], th);
            }
            total += acc;
        }
        total
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        self.accumulate(x, g, None);
    }

    fn gradient_and_curvature(&self, x: &[f64], g: &mut [f64], diag: &mut [f64]) {
        self.accumulate(x, g, Some(diag));
    }

    /// Gradient, and optionally the diagonal of the Fisher information
    /// (`b″(Θ)` times the squared Jacobian of `Θ`, with `b″` floored) used
    /// as preconditioner.
    fn accumulate(&self, x: &[f64], g: &mut [f64], mut diag: Option<&mut [f64]>) {
        let lay = self.layout;
        let d = lay.d;
        let u0 = lay.u();
        let bound = self.family.curvature_bound();
        let floor = CURVATURE_FLOOR * bound;
        g.iter_mut().for_each(|v| *v = 0.0);
        if let Some(h) = diag.as_deref_mut() {
            h.iter_mut().for_each(|v| *v = 0.0);
        }
        for (r, t) in self.edges.iter().enumerate() {
            let a0 = lay.alpha(r);
            let l0 = lay.lambda(r);
            for k in 0..t.a.len() {
                let (i, j) = (t.i[k] as usize, t.j[k] as usize);
                let th = self.theta(x, r, i, j);
                let m = self.family.mean(th);
                let res = m - t.a[k];
                g[a0 + i] += res;
                g[a0 + j] += res;
                for l in 0..d {
                    let uil = x[u0 + i * d + l];
                    let ujl = x[u0 + j * d + l];
                    let lam = x[l0 + l];
                    g[u0 + i * d + l] += res * lam * ujl;
                    g[u0 + j * d + l] += res * lam * uil;
                    g[l0 + l] += res * uil * ujl;
                }
                if let Some(h) = diag.as_deref_mut() {
                    let w = self.family.variance_from_mean(m).max(floor);
                    h[a0 + i] += w;
                    h[a0 + j] += w;
                    for l in 0..d {
                        let uil = x[u0 + i * d + l];
                        let ujl = x[u0 + j * d + l];
                        let lam2 = x[l0 + l] * x[l0 + l];
                        h[u0 + i * d + l] += w * lam2 * ujl * ujl;
                        h[u0 + j * d + l] += w * lam2 * uil * uil;
                        h[l0 + l] += w * uil * uil * ujl * ujl;
                    }
                }
            }
        }
        if let Some(h) = diag {
            // Each edge couples two nodes, so the block Jacobi scale is doubled.
            for v in h.iter_mut() {
                *v = 2.0 * v.max(1e-2 * bound);
            }
        }
    }

    /// Centers the columns of `U` and rescales them to unit mean square.
    /// With `absorb`, the centering shift is moved into `α` so that every
    /// `Θ_ij` is unchanged.
    fn project(&self, x: &mut [f64], absorb: bool) {
        let lay = self.layout;
        let (n, d) = (lay.n, lay.d);
        let u0 = lay.u();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for l in 0..d {
                mean[l] += x[u0 + i * d + l];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        if absorb {
            for r in 0..lay.layers {
                let (a0, l0) = (lay.alpha(r), lay.lambda(r));
                let quad: f64 = (0..d).map(|l| mean[l] * x[l0 + l] * mean[l]).sum();
                for i in 0..n {
                    let mut cross = 0.0;
                    for l in 0..d {
                        cross += x[u0 + i * d + l] * x[l0 + l] * mean[l];
                    }
                    x[a0 + i] += cross - 0.5 * quad;
                }
            }
        }
        for i in 0..n {
            for l in 0..d {
                x[u0 + i * d + l] -= mean[l];
            }
        }
        for l in 0..d {
            let ms: f64 = (0..n).map(|i| x[u0 + i * d + l].powi(2)).sum::<f64>() / n as f64;
            let scale = ms.sqrt();
            if scale > 1e-8 && scale.is_finite() {
                for i in 0..n {
                    x[u0 + i * d + l] /= scale;
                }
                for r in 0..lay.layers {
                    x[lay.lambda(r) + l] *= ms;
                }
            }
        }
    }

    fn initialize(&self, layers: &[&LayerData], opts: &FitOptions) -> Vec<f64> {
        let lay = self.layout;
        let (n, d) = (lay.n, lay.d);
        let mut x = vec![0.0; lay.len()];
        let mut rng = opts.rng.rng();
        // Random positions are drawn for both inits so that spectral
        // directions beyond the data's rank are still well defined.
        let normal = Normal::new(0.0, (1.0 / (n as f64).sqrt()).sqrt()).expect("valid normal");
        for v in x[lay.u()..].iter_mut() {
            *v = normal.sample(&mut rng);
        }
        for r in 0..lay.layers {
            for l in 0..d {
                x[lay.lambda(r) + l] = -0.5;
            }
        }
        if opts.init == Init::SpectralWarmStart {
            self.spectral_init(layers, &mut x);
        }
        x
    }

    /// Top-`d` eigenpairs (by magnitude) of the doubly-centered,
    /// zero-filled sum of observed adjacency matrices.
    fn spectral_init(&self, layers: &[&LayerData], x: &mut [f64]) {
        let lay = self.layout;
        let (n, d) = (lay.n, lay.d);
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut observed = 0usize;
        for layer in layers {
            for (e, v) in layer.iter() {
                m[(e.i(), e.j())] += v;
                m[(e.j(), e.i())] += v;
            }
            observed += layer.len();
        }
        let frac = observed as f64 / (layers.len() as f64 * crate::graph::pair_count(n) as f64);
        let row_means: Vec<f64> = (0..n).map(|i| m.row(i).sum() / n as f64).collect();
        let grand = row_means.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += grand - row_means[i] - row_means[j];
            }
        }
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].abs().total_cmp(&eig.eigenvalues[a].abs()).then(a.cmp(&b)));
        let sqrt_n = (n as f64).sqrt();
        for (l, &k) in order.iter().take(d).enumerate() {
            let lam = eig.eigenvalues[k] / (n as f64 * frac.max(1e-12) * layers.len() as f64);
            if lam.abs() < 1e-12 {
                continue;
            }
            for i in 0..n {
                x[lay.u() + i * d + l] = eig.eigenvectors[(i, k)] * sqrt_n;
            }
            for r in 0..lay.layers {
                x[lay.lambda(r) + l] = lam;
            }
        }
    }

    fn failure(&self, message: &str, x: &[f64]) -> Error {
        let (alphas, u, lambdas) = Flat { x: x.to_vec() }.unpack(&self.layout);
        Error::NumericalFailure {
            message: message.to_string(),
            last: Some(Box::new(LsmParams {
                alpha: alphas[0].clone(),
                u,
                lambda: lambdas[0].clone(),
            })),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{all_pairs, EdgeId};
    use rand::Rng;

    const FAMILIES: [EdgeFamily; 2] = [EdgeFamily::GaussianIdentity, EdgeFamily::BernoulliLogistic];

    fn test_rng(tag: u32) -> rand_chacha::ChaCha8Rng {
        RngStream::new(99, StreamId::new(Purpose::Test).replicate(tag)).rng()
    }

    fn random_params(n: usize, d: usize, rng: &mut impl Rng) -> LsmParams {
        LsmParams {
            alpha: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            u: DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0)),
            lambda: DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    fn random_layer(n: usize, family: EdgeFamily, keep: f64, rng: &mut impl Rng) -> LayerData {
        let mut triples = Vec::new();
        for e in all_pairs(n) {
            if rng.random::<f64>() >= keep {
                continue;
            }
            let v = match family {
                EdgeFamily::GaussianIdentity => rng.random_range(-2.0..2.0),
                EdgeFamily::BernoulliLogistic => f64::from(rng.random::<bool>() as u8),
            };
            triples.push((e.i(), e.j(), v));
        }
        LayerData::from_triples(n, triples).unwrap()
    }

    #[test]
    fn nll_at_zero_parameters() {
        let mut rng = test_rng(0);
        let layer = random_layer(10, EdgeFamily::BernoulliLogistic, 0.6, &mut rng);
        let p = LsmParams::zeros(10, 2);
        let v = nll(&p, &layer, EdgeFamily::BernoulliLogistic).unwrap();
        assert!((v - layer.len() as f64 * std::f64::consts::LN_2).abs() < 1e-10);

        let zeros = LayerData::from_triples(10, all_pairs(10).map(|e| (e.i(), e.j(), 0.0))).unwrap();
        assert_eq!(nll(&p, &zeros, EdgeFamily::GaussianIdentity).unwrap(), 0.0);
    }

    #[test]
    fn nll_matches_per_edge_sum() {
        let mut rng = test_rng(1);
        for family in FAMILIES {
            let layer = random_layer(6, family, 0.8, &mut rng);
            let p = random_params(6, 1, &mut rng);
            let oracle: f64 = layer
                .iter()
                .map(|(e, a)| {
                    let th = p.alpha[e.i()] + p.alpha[e.j()] + p.u[(e.i(), 0)] * p.lambda[0] * p.u[(e.j(), 0)];
                    crate::family::nll_edge(family, a, th).unwrap()
                })
                .sum();
            let v = nll(&p, &layer, family).unwrap();
            assert!((v - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = test_rng(2);
        let layer = random_layer(5, EdgeFamily::GaussianIdentity, 1.0, &mut rng);
        let p = LsmParams::zeros(6, 1);
        assert!(nll(&p, &layer, EdgeFamily::GaussianIdentity).is_err());
        assert!(gradient(&p, &layer, EdgeFamily::GaussianIdentity).is_err());
        let mut bad = LsmParams::zeros(5, 2);
        bad.u = DMatrix::zeros(5, 1);
        assert!(nll(&bad, &layer, EdgeFamily::GaussianIdentity).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let mut rng = test_rng(3);
        let p = random_params(7, 2, &mut rng);
        let layer = LayerData::from_triples(7, all_pairs(7).map(|e| (e.i(), e.j(), p.theta(e.i(), e.j())))).unwrap();
        let g = gradient(&p, &layer, EdgeFamily::GaussianIdentity).unwrap();
        let max = g.alpha.iter().chain(g.u.iter()).chain(g.lambda.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-12, "max gradient {max}");
    }

    #[test]
    fn predictions_from_zero_parameters() {
        let p = LsmParams::zeros(5, 2);
        let m = predict_means(&p, EdgeFamily::BernoulliLogistic).unwrap();
        assert!(m.packed().iter().all(|&v| v == 0.5));
        let m = predict_means(&p, EdgeFamily::GaussianIdentity).unwrap();
        assert!(m.packed().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predictions_are_symmetric() {
        let mut rng = test_rng(4);
        let p = random_params(9, 3, &mut rng);
        let m = predict_means(&p, EdgeFamily::BernoulliLogistic).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                if i != j {
                    assert_eq!(m.at(i, j), m.at(j, i));
                    assert_eq!(m.at(i, j), EdgeFamily::BernoulliLogistic.mean(p.theta(j, i)));
                }
            }
        }
    }

    #[test]
    fn predictions_invariant_to_identifiability_transforms() {
        let mut rng = test_rng(5);
        let p = random_params(8, 2, &mut rng);
        // Q swaps the two axes and flips one sign; QΛQᵀ stays diagonal.
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let lam = DMatrix::from_diagonal(&p.lambda);
        let lam2 = &q * lam * q.transpose();
        let moved = LsmParams {
            alpha: p.alpha.clone(),
            u: &p.u * q.transpose(),
            lambda: lam2.diagonal(),
        };
        assert!((lam2[(0, 1)]).abs() < 1e-15);
        for family in FAMILIES {
            let a = predict_means(&p, family).unwrap();
            let b = predict_means(&moved, family).unwrap();
            for (x, y) in a.packed().iter().zip(b.packed()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projection_preserves_theta() {
        let mut rng = test_rng(6);
        let p = random_params(10, 3, &mut rng);
        let layer = random_layer(10, EdgeFamily::GaussianIdentity, 1.0, &mut rng);
        let problem = Problem::new(&[&layer], EdgeFamily::GaussianIdentity, 3);
        let mut x = Flat::from_params(&[&p]).x;
        let before = problem.objective(&x);
        problem.project(&mut x, true);
        let after = problem.objective(&x);
        assert!((before - after).abs() < 1e-9 * before.abs().max(1.0));
        let (alphas, u, lambdas) = Flat { x }.unpack(&problem.layout);
        let q = LsmParams { alpha: alphas[0].clone(), u, lambda: lambdas[0].clone() };
        assert!(q.max_column_mean() < 1e-12);
        for e in all_pairs(10) {
            assert!((p.theta(e.i(), e.j()) - q.theta(e.i(), e.j())).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_is_monotone_centered_and_deterministic() {
        let mut rng = test_rng(7);
        for family in FAMILIES {
            let layer = random_layer(25, family, 0.7, &mut rng);
            let opts = FitOptions { max_iters: 300, ..FitOptions::default() };
            let fit1 = fit(&layer, family, 2, &opts).unwrap();
            for w in fit1.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "objective rose: {w:?}");
            }
            assert!(fit1.params.max_column_mean() <= 1e-10);
            assert_eq!(fit1.iterations + 1, fit1.trace.len());
            let fit2 = fit(&layer, family, 2, &opts).unwrap();
            assert_eq!(fit1.params, fit2.params);
            let direct = nll(&fit1.params, &layer, family).unwrap();
            assert!((direct - fit1.objective).abs() < 1e-8 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn single_positive_edge_pushes_probability_up() {
        let layer = LayerData::from_triples(5, [(1, 3, 1.0)]).unwrap();
        let fit = fit(&layer, EdgeFamily::BernoulliLogistic, 1, &FitOptions::default()).unwrap();
        let m = predict_means(&fit.params, EdgeFamily::BernoulliLogistic).unwrap();
        assert!(m.get(EdgeId::canonical(1, 3)) >= 0.5);
    }

    #[test]
    fn unconstrained_alpha_is_stationary_after_fit() {
        let mut rng = test_rng(8);
        let layer = random_layer(20, EdgeFamily::GaussianIdentity, 0.8, &mut rng);
        let opts = FitOptions { rel_tol: 1e-14, max_iters: 20000, ..FitOptions::default() };
        let fit = fit(&layer, EdgeFamily::GaussianIdentity, 1, &opts).unwrap();
        let g = gradient(&fit.params, &layer, EdgeFamily::GaussianIdentity).unwrap();
        let max_alpha = g.alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_alpha < 1e-4, "alpha gradient {max_alpha}");
    }

    #[test]
    fn spectral_warm_start_fits() {
        let mut rng = test_rng(9);
        let layer = random_layer(30, EdgeFamily::GaussianIdentity, 0.75, &mut rng);
        let opts = FitOptions { init: Init::SpectralWarmStart, ..FitOptions::default() };
        let fit = fit(&layer, EdgeFamily::GaussianIdentity, 2, &opts).unwrap();
        assert!(fit.objective <= fit.trace[0]);
        assert!(fit.params.max_column_mean() <= 1e-10);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let layer = LayerData::from_triples(4, [(0, 1, 1.0)]).unwrap();
        let empty = LayerData::from_triples(4, Vec::<(usize, usize, f64)>::new()).unwrap();
        let opts = FitOptions::default();
        assert!(fit(&layer, EdgeFamily::GaussianIdentity, 0, &opts).is_err());
        assert!(fit(&empty, EdgeFamily::GaussianIdentity, 1, &opts).is_err());
        let bad = FitOptions { max_iters: 0, ..opts };
        assert!(fit(&layer, EdgeFamily::GaussianIdentity, 1, &bad).is_err());
        let half = LayerData::from_triples(4, [(0, 1, 0.5)]).unwrap();
        assert!(fit(&half, EdgeFamily::BernoulliLogistic, 1, &opts).is_err());
    }

    #[test]
    fn joint_fit_with_one_layer_matches_single_fit() {
        let mut rng = test_rng(10);
        let layer = random_layer(15, EdgeFamily::BernoulliLogistic, 0.8, &mut rng);
        let opts = FitOptions::default();
        let single = fit(&layer, EdgeFamily::BernoulliLogistic, 2, &opts).unwrap();
        let joint = fit_joint(&[&layer], EdgeFamily::BernoulliLogistic, 2, &opts).unwrap();
        assert_eq!(single.objective, joint.objective);
        assert_eq!(single.params, joint.layer_params(0));
    }
}
