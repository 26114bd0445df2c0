//! Synthetic multilayer networks with known ground truth.
//!
//! Five generating processes are available:
//!
//! * [`Example::Ex1`]: auxiliary latent positions are the target's plus
//!   `Uniform(−σ, σ)` noise; every layer draws its own `α` and `Λ`.
//! * [`Example::Ex2`]: like Ex1 but layers differ in latent dimension; extra
//!   coordinates are fresh `Normal(0, 1)` draws.
//! * [`Example::Ex3`]: seven Gaussian layers whose natural parameters are the
//!   target's plus constant offsets `5/n^0.6`, `5/n^0.3` and `5`.
//! * [`Example::Ex4`]: three Gaussian layers with offsets `+5` and `−5`.
//! * [`Example::Ex5`]: the Ex1 process with probit edges, `A ~ Bernoulli(Φ(Θ))`.
//!
//! Latent positions are centered and normalized so that `UᵀU = n·I`.
//! Gaussian edge noise has variance [`SimScenario::noise_variance`]
//! (20 by default). Every layer independently hides a fraction
//! `missing_rate` of its pairs.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::EdgeFamily;
use crate::graph::{all_pairs, mask_edges, EdgeId, LayerData, MultilayerDataset, SymMatrix};
use crate::lsm::LsmParams;
use crate::rng::{Purpose, RngStream, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Example {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    Ex5,
}

impl fmt::Display for Example {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Example::Ex1 => "ex1",
            Example::Ex2 => "ex2",
            Example::Ex3 => "ex3",
            Example::Ex4 => "ex4",
            Example::Ex5 => "ex5",
        };
        f.write_str(s)
    }
}

impl FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_start_matches("example").trim_start_matches('_') {
            "ex1" | "1" => Ok(Example::Ex1),
            "ex2" | "2" => Ok(Example::Ex2),
            "ex3" | "3" => Ok(Example::Ex3),
            "ex4" | "4" => Ok(Example::Ex4),
            "ex5" | "5" => Ok(Example::Ex5),
            other => Err(Error::invalid(format!("unknown example '{other}'"))),
        }
    }
}

fn default_missing_rate() -> f64 {
    0.25
}

fn default_noise_variance() -> f64 {
    20.0
}

/// Declarative description of one simulated dataset family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub example: Example,
    pub family: EdgeFamily,
    pub n: usize,
    pub layers: usize,
    /// Half-width of the uniform latent perturbation (Ex1, Ex2, Ex5).
    #[serde(default)]
    pub sigma: f64,
    /// True latent dimension per layer.
    pub dims: Vec<usize>,
    #[serde(default = "default_missing_rate")]
    pub missing_rate: f64,
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimScenario {
    pub fn example1(n: usize, layers: usize, sigma: f64, family: EdgeFamily, seed: u64) -> Self {
        SimScenario {
            example: Example::Ex1,
            family,
            n,
            layers,
            sigma,
            dims: vec![2; layers],
            missing_rate: 0.25,
            noise_variance: 20.0,
            seed,
        }
    }

    pub fn example2(n: usize, dims: Vec<usize>, family: EdgeFamily, seed: u64) -> Self {
        SimScenario {
            example: Example::Ex2,
            family,
            n,
            layers: dims.len(),
            sigma: 3.0,
            dims,
            missing_rate: 0.25,
            noise_variance: 20.0,
            seed,
        }
    }

    pub fn example3(n: usize, seed: u64) -> Self {
        SimScenario {
            example: Example::Ex3,
            family: EdgeFamily::GaussianIdentity,
            n,
            layers: 7,
            sigma: 0.0,
            dims: vec![2; 7],
            missing_rate: 0.25,
            noise_variance: 20.0,
            seed,
        }
    }

    pub fn example4(n: usize, seed: u64) -> Self {
        SimScenario {
            example: Example::Ex4,
            layers: 3,
            dims: vec![2; 3],
            ..Self::example3(n, seed)
        }
    }

    pub fn example5(n: usize, layers: usize, sigma: f64, seed: u64) -> Self {
        SimScenario {
            example: Example::Ex5,
            ..Self::example1(n, layers, sigma, EdgeFamily::BernoulliLogistic, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::invalid("scenario needs at least 3 nodes"));
        }
        if self.layers < 1 || self.dims.len() != self.layers {
            return Err(Error::invalid(format!(
                "scenario has {} layers but {} dimensions",
                self.layers,
                self.dims.len()
            )));
        }
        if self.dims.iter().any(|&d| d == 0 || d >= self.n) {
            return Err(Error::invalid("latent dimensions must lie in 1..n"));
        }
        if !(self.missing_rate > 0.0 && self.missing_rate < 1.0) {
            return Err(Error::invalid("missing_rate must lie in (0, 1)"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be finite and non-negative"));
        }
        if !(self.noise_variance > 0.0) {
            return Err(Error::invalid("noise_variance must be positive"));
        }
        let same_dims = self.dims.iter().all(|&d| d == self.dims[0]);
        match self.example {
            Example::Ex1 | Example::Ex5 if self.layers < 2 => {
                Err(Error::invalid(format!("{} needs at least 2 layers", self.example)))
            }
            Example::Ex1 | Example::Ex5 if !same_dims => {
                Err(Error::invalid(format!("{} uses one latent dimension for all layers", self.example)))
            }
            Example::Ex5 if self.family != EdgeFamily::BernoulliLogistic => {
                Err(Error::invalid("ex5 generates binary edges; family must be logistic"))
            }
            Example::Ex3 if self.layers != 7 => Err(Error::invalid("ex3 requires 7 layers")),
            Example::Ex4 if self.layers != 3 => Err(Error::invalid("ex4 requires 3 layers")),
            Example::Ex3 | Example::Ex4 if self.family != EdgeFamily::GaussianIdentity => {
                Err(Error::invalid(format!("{} uses Gaussian edges", self.example)))
            }
            Example::Ex3 | Example::Ex4 if !same_dims => {
                Err(Error::invalid(format!("{} uses one latent dimension for all layers", self.example)))
            }
            _ => Ok(()),
        }
    }

    /// Generates replicate `replicate` of this scenario.
    pub fn generate(&self, replicate: u32) -> Result<(MultilayerDataset, GroundTruth)> {
        self.validate()?;
        let base = RngStream::new(self.seed, StreamId::new(Purpose::LatentParams).replicate(replicate));
        let params = match self.example {
            Example::Ex1 | Example::Ex5 => perturbed_params(self, &base, false),
            Example::Ex2 => perturbed_params(self, &base, true),
            Example::Ex3 | Example::Ex4 => offset_params(self, &base),
        };
        let probit = self.example == Example::Ex5;
        let theta_star: Vec<SymMatrix> = params.iter().map(LsmParams::theta_matrix).collect();
        let mean_star: Vec<SymMatrix> = theta_star
            .iter()
            .map(|t| if probit { t.map(normal_cdf) } else { t.map(|v| self.family.mean(v)) })
            .collect();

        let pairs: BTreeSet<EdgeId> = all_pairs(self.n).collect();
        let noise = Normal::new(0.0, self.noise_variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
        let mut layers = Vec::with_capacity(self.layers);
        for r in 0..self.layers {
            let mut rng = base.derive(StreamId::new(Purpose::EdgeSample).layer(r).replicate(replicate)).rng();
            let values: Vec<f64> = pairs
                .iter()
                .map(|&e| match self.family {
                    EdgeFamily::GaussianIdentity => theta_star[r].get(e) + noise.sample(&mut rng),
                    EdgeFamily::BernoulliLogistic => {
                        f64::from(u8::from(rng.random::<f64>() < mean_star[r].get(e)))
                    }
                })
                .collect();
            let mask = base.derive(StreamId::new(Purpose::Mask).layer(r).replicate(replicate));
            let (observed, _) = mask_edges(&pairs, self.missing_rate, &mask)?;
            let kept = pairs
                .iter()
                .zip(values)
                .filter(|(e, _)| observed.contains(e))
                .map(|(&e, v)| (e, v))
                .collect();
            layers.push(LayerData::new(self.n, kept)?);
        }
        let dataset = MultilayerDataset::new(layers, vec![self.family; self.layers])?;
        Ok((
            dataset,
            GroundTruth {
                theta_star,
                mean_star,
                params_star: params,
            },
        ))
    }
}

/// True parameters, natural parameters and edge means of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta_star: Vec<SymMatrix>,
    pub mean_star: Vec<SymMatrix>,
    pub params_star: Vec<LsmParams>,
}

pub fn gen_example1(n: usize, layers: usize, sigma: f64, family: EdgeFamily, seed: u64) -> Result<(MultilayerDataset, GroundTruth)> {
    SimScenario::example1(n, layers, sigma, family, seed).generate(0)
}

pub fn gen_example2(n: usize, dims: &[usize], family: EdgeFamily, seed: u64) -> Result<(MultilayerDataset, GroundTruth)> {
    SimScenario::example2(n, dims.to_vec(), family, seed).generate(0)
}

pub fn gen_example3(n: usize, seed: u64) -> Result<(MultilayerDataset, GroundTruth)> {
    SimScenario::example3(n, seed).generate(0)
}

pub fn gen_example4(n: usize, seed: u64) -> Result<(MultilayerDataset, GroundTruth)> {
    SimScenario::example4(n, seed).generate(0)
}

pub fn gen_example5(n: usize, layers: usize, sigma: f64, seed: u64) -> Result<(MultilayerDataset, GroundTruth)> {
    SimScenario::example5(n, layers, sigma, seed).generate(0)
}

/// Natural-parameter offsets of the Ex3/Ex4 layers relative to the target.
pub fn layer_offsets(example: Example, n: usize) -> Vec<f64> {
    let n = n as f64;
    match example {
        Example::Ex3 => {
            let near = 5.0 / n.powf(0.6);
            let mid = 5.0 / n.powf(0.3);
            vec![0.0, near, near, mid, mid, 5.0, 5.0]
        }
        Example::Ex4 => vec![0.0, 5.0, -5.0],
        _ => Vec::new(),
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Centers the columns and rescales so that `UᵀU = n·I`, using the
/// symmetric inverse square root of the Gram matrix.
pub fn normalize_latent(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let n = raw.nrows();
    let mut u = raw.clone();
    for mut col in u.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let gram = u.transpose() * &u;
    let eig = SymmetricEigen::new(gram);
    let inv_sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&v| if v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 }),
    );
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    u * w * (n as f64).sqrt()
}

fn standard_normal_matrix(n: usize, d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    // Row-major draw order keeps node i's coordinates adjacent in the stream.
    let mut m = DMatrix::zeros(n, d);
    for i in 0..n {
        for l in 0..d {
            m[(i, l)] = StandardNormal.sample(rng);
        }
    }
    m
}

fn draw_alpha_lambda(n: usize, d: usize, rng: &mut impl Rng) -> (DVector<f64>, DVector<f64>) {
    let alpha_dist = Uniform::new_inclusive(-2.0, -1.0).expect("valid range");
    let lambda_dist = Uniform::new_inclusive(-1.0, -0.5).expect("valid range");
    let alpha = DVector::from_iterator(n, (0..n).map(|_| alpha_dist.sample(rng)));
    let lambda = DVector::from_iterator(d, (0..d).map(|_| lambda_dist.sample(rng)));
    (alpha, lambda)
}

/// Ex1/Ex2/Ex5 parameters. With `fresh_extra`, coordinates beyond the
/// target's dimension are fresh standard normals (Ex2).
fn perturbed_params(s: &SimScenario, base: &RngStream, fresh_extra: bool) -> Vec<LsmParams> {
    let n = s.n;
    let d1 = s.dims[0];
    let layer_rng = |r: usize| base.derive(StreamId::new(Purpose::LatentParams).layer(r).replicate(base.id.replicate)).rng();
    let mut rng0 = layer_rng(0);
    let raw_target = standard_normal_matrix(n, d1, &mut rng0);
    let (alpha0, lambda0) = draw_alpha_lambda(n, d1, &mut rng0);
    let mut out = vec![LsmParams {
        alpha: alpha0,
        u: normalize_latent(&raw_target),
        lambda: lambda0,
    }];
    for r in 1..s.layers {
        let dr = s.dims[r];
        let mut rng = layer_rng(r);
        let mut raw = DMatrix::zeros(n, dr);
        let shared = if fresh_extra { dr.min(d1) } else { dr };
        for i in 0..n {
            for l in 0..dr {
                raw[(i, l)] = if l < shared {
                    let jitter = if s.sigma > 0.0 { rng.random_range(-s.sigma..s.sigma) } else { 0.0 };
                    raw_target[(i, l)] + jitter
                } else {
                    StandardNormal.sample(&mut rng)
                };
            }
        }
        let (alpha, lambda) = draw_alpha_lambda(n, dr, &mut rng);
        out.push(LsmParams {
            alpha,
            u: normalize_latent(&raw),
            lambda,
        });
    }
    out
}

/// Ex3/Ex4 parameters: `α₁ = 0`, `Λ₁ = −I`, and constant offsets on `Θ`
/// represented as `α_r = offset/2`.
fn offset_params(s: &SimScenario, base: &RngStream) -> Vec<LsmParams> {
    let n = s.n;
    let d = s.dims[0];
    let mut rng = base.derive(StreamId::new(Purpose::LatentParams).layer(0).replicate(base.id.replicate)).rng();
    let u = normalize_latent(&standard_normal_matrix(n, d, &mut rng));
    layer_offsets(s.example, n)
        .into_iter()
        .map(|offset| LsmParams {
            alpha: DVector::from_element(n, offset / 2.0),
            u: u.clone(),
            lambda: DVector::from_element(d, -1.0),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_gives_scaled_identity_gram() {
        let mut rng = RngStream::new(1, StreamId::new(Purpose::Test)).rng();
        let raw = standard_normal_matrix(50, 3, &mut rng);
        let u = normalize_latent(&raw);
        let gram = u.transpose() * &u;
        for a in 0..3 {
            assert!(u.column(a).sum().abs() < 1e-9);
            for b in 0..3 {
                let expected = if a == b { 50.0 } else { 0.0 };
                assert!((gram[(a, b)] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ex1_mask_accounting_and_determinism() {
        let s = SimScenario::example1(30, 3, 1.0, EdgeFamily::GaussianIdentity, 5);
        let (data, truth) = s.generate(0).unwrap();
        for r in 0..3 {
            let missing = data.layer(r).missing().len();
            assert_eq!(data.layer(r).len() + missing, 435);
            assert_eq!(missing, (0.25f64 * 435.0).round() as usize);
        }
        assert_eq!(truth.mean_star[0], truth.theta_star[0]);
        let (again, truth2) = s.generate(0).unwrap();
        assert_eq!(data, again);
        assert_eq!(truth, truth2);
        let (other, _) = s.generate(1).unwrap();
        assert_ne!(data, other);
    }

    #[test]
    fn ex1_sigma_zero_shares_latent_positions() {
        let s = SimScenario::example1(40, 4, 0.0, EdgeFamily::BernoulliLogistic, 2);
        let (_, truth) = s.generate(0).unwrap();
        for r in 1..4 {
            assert_eq!(truth.params_star[r].u, truth.params_star[0].u);
            assert_ne!(truth.params_star[r].alpha, truth.params_star[0].alpha);
        }
        let s3 = SimScenario::example1(40, 4, 3.0, EdgeFamily::BernoulliLogistic, 2);
        let (_, truth3) = s3.generate(0).unwrap();
        assert_ne!(truth3.params_star[1].u, truth3.params_star[0].u);
        // Edge means are probabilities.
        assert!(truth.mean_star.iter().all(|m| m.packed().iter().all(|&p| p > 0.0 && p < 1.0)));
    }

    #[test]
    fn ex2_rank_bound() {
        let s = SimScenario::example2(40, vec![3, 1, 2, 4], EdgeFamily::GaussianIdentity, 3);
        let (_, truth) = s.generate(0).unwrap();
        for (r, &d) in s.dims.iter().enumerate() {
            let n = 40;
            let p = &truth.params_star[r];
            let full = DMatrix::from_fn(n, n, |i, j| p.theta(i, j));
            let sv = full.singular_values();
            let rank = sv.iter().filter(|&&v| v > 1e-8 * sv[0]).count();
            assert!(rank <= d + 2, "layer {r}: rank {rank} > {}", d + 2);
        }
    }

    #[test]
    fn ex3_offsets() {
        let offsets = layer_offsets(Example::Ex3, 200);
        assert!((offsets[1] - 0.208_14).abs() < 1e-4);
        assert!((offsets[1] - 5.0 / 200f64.powf(0.6)).abs() < 1e-15);
        let (_, truth) = gen_example3(30, 1).unwrap();
        for r in 1..7 {
            let diffs: Vec<f64> = truth.theta_star[r]
                .packed()
                .iter()
                .zip(truth.theta_star[0].packed())
                .map(|(a, b)| a - b)
                .collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
            assert!(var < 1e-20);
            assert!((mean - offsets_for(30)[r]).abs() < 1e-12);
        }
        assert!(truth.params_star[0].alpha.iter().all(|&a| a == 0.0));
    }

    fn offsets_for(n: usize) -> Vec<f64> {
        layer_offsets(Example::Ex3, n)
    }

    #[test]
    fn ex4_pair_average_recovers_target() {
        let (_, truth) = gen_example4(25, 4).unwrap();
        for ((t1, t2), t3) in truth.mean_star[0]
            .packed()
            .iter()
            .zip(truth.mean_star[1].packed())
            .zip(truth.mean_star[2].packed())
        {
            assert!(((t2 + t3) / 2.0 - t1).abs() < 1e-12);
            assert!((t2 - t1 - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ex5_uses_probit_means() {
        assert_eq!(normal_cdf(0.0), 0.5);
        let (data, truth) = gen_example5(30, 2, 3.0, 8).unwrap();
        assert_eq!(data.family(0), EdgeFamily::BernoulliLogistic);
        for (m, t) in truth.mean_star[0].packed().iter().zip(truth.theta_star[0].packed()) {
            assert_eq!(*m, normal_cdf(*t));
        }
        assert!(data.target().iter().all(|(_, v)| v == 0.0 || v == 1.0));
    }

    #[test]
    fn scenario_admissibility() {
        let mut s = SimScenario::example3(30, 1);
        s.layers = 5;
        s.dims = vec![2; 5];
        assert!(s.validate().is_err());
        let mut s = SimScenario::example4(30, 1);
        s.family = EdgeFamily::BernoulliLogistic;
        assert!(s.validate().is_err());
        let s = SimScenario::example1(30, 1, 1.0, EdgeFamily::GaussianIdentity, 1);
        assert!(s.validate().is_err());
        assert!("example1".parse::<Example>().is_ok());
        assert!("ex9".parse::<Example>().is_err());
    }

    #[test]
    fn scenario_round_trips_through_toml() {
        let s = SimScenario::example2(50, vec![3, 1, 2, 4], EdgeFamily::BernoulliLogistic, 11);
        let text = toml::to_string(&s).unwrap();
        let back: SimScenario = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
        let minimal: SimScenario = toml::from_str(
            "example = \"ex1\"\nfamily = \"gaussian\"\nn = 40\nlayers = 2\nsigma = 1.0\ndims = [2, 2]\n",
        )
        .unwrap();
        assert_eq!(minimal.missing_rate, 0.25);
        assert_eq!(minimal.noise_variance, 20.0);
    }
}
