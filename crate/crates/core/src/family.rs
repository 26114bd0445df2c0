//! Exponential-family edge models.
//!
//! An edge value `a` with natural parameter `θ` has density proportional to
//! `exp(aθ − b(θ))`; the mean is `b′(θ)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Natural parameters of logistic edges are clamped to this range inside `b` and `b′`.
pub const LOGISTIC_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeFamily {
    /// Continuous edges, `b(θ) = θ²/2`. The noise variance is a nuisance constant.
    #[serde(rename = "gaussian")]
    GaussianIdentity,
    /// Binary edges, `b(θ) = log(1 + e^θ)`.
    #[serde(rename = "logistic")]
    BernoulliLogistic,
}

impl EdgeFamily {
    /// Cumulant function `b(θ)`.
    #[inline]
    pub fn cumulant(self, theta: f64) -> f64 {
        match self {
            EdgeFamily::GaussianIdentity => 0.5 * theta * theta,
            EdgeFamily::BernoulliLogistic => softplus(clamp_logit(theta)),
        }
    }

    /// Mean link `b′(θ)` without input validation; hot loops use this.
    #[inline]
    pub fn mean(self, theta: f64) -> f64 {
        match self {
            EdgeFamily::GaussianIdentity => theta,
            EdgeFamily::BernoulliLogistic => logistic(clamp_logit(theta)),
        }
    }

    /// Variance function `b″(θ)`.
    #[inline]
    pub fn variance(self, theta: f64) -> f64 {
        match self {
            EdgeFamily::GaussianIdentity => 1.0,
            EdgeFamily::BernoulliLogistic => {
                let p = self.mean(theta);
                p * (1.0 - p)
            }
        }
    }

    /// `b″` expressed through the mean `b′(θ)`.
    #[inline]
    pub fn variance_from_mean(self, mean: f64) -> f64 {
        match self {
            EdgeFamily::GaussianIdentity => 1.0,
            EdgeFamily::BernoulliLogistic => mean * (1.0 - mean),
        }
    }

    /// Upper bound on `b″`, used to scale the fitting preconditioner.
    #[inline]
    pub fn curvature_bound(self) -> f64 {
        match self {
            EdgeFamily::GaussianIdentity => 1.0,
            EdgeFamily::BernoulliLogistic => 0.25,
        }
    }

    /// Negative log-likelihood of one edge with constants in `a` dropped.
    #[inline]
    pub fn nll_unchecked(self, a: f64, theta: f64) -> f64 {
        match self {
            EdgeFamily::GaussianIdentity => 0.5 * theta * theta - a * theta,
            EdgeFamily::BernoulliLogistic => {
                let t = clamp_logit(theta);
                softplus(t) - a * t
            }
        }
    }

    pub fn validate_value(self, a: f64) -> Result<()> {
        match self {
            EdgeFamily::GaussianIdentity if a.is_finite() => Ok(()),
            EdgeFamily::BernoulliLogistic if a == 0.0 || a == 1.0 => Ok(()),
            _ => Err(Error::invalid(format!(
                "edge value {a} is not valid for the {self} family"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeFamily::GaussianIdentity => "gaussian",
            EdgeFamily::BernoulliLogistic => "logistic",
        }
    }
}

impl fmt::Display for EdgeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gaussian_identity" | "normal" => Ok(EdgeFamily::GaussianIdentity),
            "logistic" | "bernoulli" | "bernoulli_logistic" | "binary" => {
                Ok(EdgeFamily::BernoulliLogistic)
            }
            other => Err(Error::invalid(format!("unknown edge family '{other}'"))),
        }
    }
}

/// Mean-value link `b′(θ)`.
pub fn b_prime(family: EdgeFamily, theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("natural parameter {theta} is not finite")));
    }
    Ok(family.mean(theta))
}

/// `−[aθ − b(θ)]` for a single edge.
pub fn nll_edge(family: EdgeFamily, a: f64, theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::invalid(format!("natural parameter {theta} is not finite")));
    }
    family.validate_value(a)?;
    Ok(family.nll_unchecked(a, theta))
}

#[inline]
fn clamp_logit(theta: f64) -> f64 {
    theta.clamp(-LOGISTIC_CLAMP, LOGISTIC_CLAMP)
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}
