//! Prediction metrics, weight diagnostics and baseline methods.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::averaging::{predict_averaged, CandidateId, CandidatePredictions, WeightVector};
use crate::error::{Error, Result};
use crate::graph::{EdgeId, MultilayerDataset, SymMatrix};
use crate::lsm::{fit_joint, FitOptions};
use crate::pipeline::{fit_target, target_folds, TransferMaConfig};
use crate::rng::{Purpose, RngStream, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    /// Root of the summed squared error against the true mean.
    #[serde(rename = "SMPR")]
    Smpr,
    /// Root of the summed squared error against held-out edge values.
    #[serde(rename = "SMPE")]
    Smpe,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Smpr => "SMPR",
            MetricKind::Smpe => "SMPE",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smpr" => Ok(MetricKind::Smpr),
            "smpe" => Ok(MetricKind::Smpe),
            _ => Err(Error::invalid(format!("unknown metric `{s}` (expected smpr or smpe)"))),
        }
    }
}

/// One row of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario: String,
    pub method: String,
    pub replicate: u32,
    pub metric: MetricKind,
    pub value: f64,
}

fn root_sum_squares<'a>(
    pred: &BTreeMap<EdgeId, f64>,
    reference: impl Iterator<Item = (EdgeId, f64)> + 'a,
) -> Result<f64> {
    let mut total = 0.0;
    for (e, r) in reference {
        let p = pred
            .get(&e)
            .ok_or_else(|| Error::invalid(format!("no prediction for edge {e}")))?;
        total += (p - r) * (p - r);
    }
    Ok(total.sqrt())
}

/// `√Σ_{e ∈ missing} (pred[e] − mean[e])²`.
pub fn smpr(pred: &BTreeMap<EdgeId, f64>, truth_mean: &SymMatrix, missing: &[EdgeId]) -> Result<f64> {
    if let Some(e) = missing.iter().find(|e| e.j() >= truth_mean.n()) {
        return Err(Error::invalid(format!("edge {e} is outside the truth matrix")));
    }
    root_sum_squares(pred, missing.iter().map(|&e| (e, truth_mean.get(e))))
}

/// `√Σ_e (pred[e] − A[e])²` over the held-out edges.
pub fn smpe(pred: &BTreeMap<EdgeId, f64>, heldout: &BTreeMap<EdgeId, f64>) -> Result<f64> {
    root_sum_squares(pred, heldout.iter().map(|(&e, &v)| (e, v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    /// Total weight on the informative candidates.
    pub tau_hat: f64,
    /// Distance of the normalized non-informative weights from the ideal
    /// combination; `None` when no ideal was given or those weights are 0.
    pub dist: Option<f64>,
    pub weights: Vec<(CandidateId, f64)>,
}

/// `tau_hat = Σ_{informative} w`; `dist = ‖w_rest / ‖w_rest‖₁ − ideal‖₂`,
/// with `w_rest` in candidate order.
pub fn weight_diagnostics(
    w: &WeightVector,
    informative: &BTreeSet<CandidateId>,
    ideal: Option<&[f64]>,
) -> Result<WeightDiagnostics> {
    if let Some(c) = informative.iter().find(|c| !w.index.contains(c)) {
        return Err(Error::invalid(format!("informative candidate {c} is not in the weight vector")));
    }
    let mut tau_hat = 0.0;
    let mut rest = Vec::new();
    for (c, &v) in w.index.iter().zip(&w.w) {
        if informative.contains(c) {
            tau_hat += v;
        } else {
            rest.push(v);
        }
    }
    let dist = match ideal {
        None => None,
        Some(ideal) => {
            if ideal.len() != rest.len() {
                return Err(Error::invalid(format!(
                    "ideal combination has {} entries, {} non-informative candidates",
                    ideal.len(),
                    rest.len()
                )));
            }
            let mass: f64 = rest.iter().sum();
            (mass > 0.0).then(|| {
                rest.iter()
                    .zip(ideal)
                    .map(|(v, t)| (v / mass - t).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
        }
    };
    Ok(WeightDiagnostics {
        tau_hat,
        dist,
        weights: w.index.iter().copied().zip(w.w.iter().copied()).collect(),
    })
}

/// Equal-weight average of every candidate.
pub fn simp_ma(preds: &CandidatePredictions, edges: &[EdgeId]) -> Result<BTreeMap<EdgeId, f64>> {
    predict_averaged(&WeightVector::uniform(preds.candidates()), preds, edges)
}

/// Fit of the target alone at dimension `d`, predicted on its unobserved
/// pairs. Uses the same random stream as the pipeline's full target fit.
pub fn target_only(
    dataset: &MultilayerDataset,
    d: usize,
    opts: &FitOptions,
    seed: u64,
) -> Result<BTreeMap<EdgeId, f64>> {
    let target = dataset.select_layers(&[0])?;
    let mut cfg = TransferMaConfig::new(vec![d], 2, seed);
    cfg.fit_options = *opts;
    // Folds are irrelevant for a full-data fit.
    let folds = target_folds(&target, &cfg)?;
    let (means, _) = fit_target(&target, &cfg, &folds, d, None)?;
    Ok(target.target().missing().into_iter().map(|e| (e, means.means.get(e))).collect())
}

/// Joint fit with a shared latent matrix and per-layer `α`, `Λ`; returns the
/// fitted mean matrix of every layer.
pub fn fit_fmlsm(dataset: &MultilayerDataset, d: usize, opts: &FitOptions, seed: u64) -> Result<Vec<SymMatrix>> {
    let family = dataset.family(0);
    if dataset.families().iter().any(|&f| f != family) {
        return Err(Error::invalid("the joint model needs all layers in one family"));
    }
    let layers: Vec<_> = dataset.layers().iter().collect();
    let opts = opts.with_rng(RngStream::new(seed, StreamId::new(Purpose::JointFit).dim(d)));
    let joint = fit_joint(&layers, family, d, &opts)?;
    Ok((0..dataset.num_layers())
        .map(|r| {
            let p = joint.layer_params(r);
            SymMatrix::from_fn(dataset.n(), |i, j| family.mean(p.theta(i, j)))
        })
        .collect())
}

/// Median and quartiles of replicate values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Summary {
        count: s.len(),
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        min: s[0],
        max: s[s.len() - 1],
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    summarize(values).map(|s| s.median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::MeanMatrix;
    use crate::family::EdgeFamily;
    use crate::graph::all_pairs;
    use crate::lsm::Provenance;
    use crate::pipeline::run_transfer_ma;
    use crate::simgen::SimScenario;
    use proptest::prelude::*;

    fn edges(n: usize) -> Vec<EdgeId> {
        all_pairs(n).collect()
    }

    #[test]
    fn metric_examples() {
        let truth = SymMatrix::from_fn(5, |i, j| (i * j) as f64);
        let missing = edges(5);
        let exact: BTreeMap<_, _> = missing.iter().map(|&e| (e, truth.get(e))).collect();
        assert_eq!(smpr(&exact, &truth, &missing).unwrap(), 0.0);
        let shifted: BTreeMap<_, _> = missing.iter().map(|&e| (e, truth.get(e) + 0.5)).collect();
        assert!((smpr(&shifted, &truth, &missing).unwrap() - (10f64).sqrt() * 0.5).abs() < 1e-12);

        let heldout: BTreeMap<_, _> = missing.iter().enumerate().map(|(k, &e)| (e, (k % 2) as f64)).collect();
        assert_eq!(smpe(&heldout, &heldout).unwrap(), 0.0);
        let half: BTreeMap<_, _> = missing.iter().map(|&e| (e, 0.5)).collect();
        assert!((smpe(&half, &heldout).unwrap() - (10f64).sqrt() * 0.5).abs() < 1e-12);

        let partial: BTreeMap<_, _> = exact.iter().take(3).map(|(&e, &v)| (e, v)).collect();
        assert!(smpr(&partial, &truth, &missing).is_err());
        assert!(smpe(&partial, &heldout).is_err());
    }

    #[test]
    fn metric_names_parse() {
        assert_eq!("SMPR".parse::<MetricKind>().unwrap(), MetricKind::Smpr);
        assert_eq!("smpe".parse::<MetricKind>().unwrap(), MetricKind::Smpe);
        assert!("auc".parse::<MetricKind>().is_err());
    }

    fn weights(w: Vec<f64>) -> WeightVector {
        let index = (0..w.len()).map(|k| CandidateId { layer: k, dim: 1 }).collect();
        WeightVector { w, index }
    }

    #[test]
    fn diagnostics_examples() {
        let w = weights(vec![0.7, 0.3, 0.0]);
        let inf: BTreeSet<_> = [CandidateId { layer: 0, dim: 1 }, CandidateId { layer: 1, dim: 1 }].into();
        let d = weight_diagnostics(&w, &inf, None).unwrap();
        assert!((d.tau_hat - 1.0).abs() < 1e-15);
        assert_eq!(d.dist, None);

        let w = weights(vec![0.2, 0.4, 0.4]);
        let inf: BTreeSet<_> = [CandidateId { layer: 0, dim: 1 }].into();
        let d = weight_diagnostics(&w, &inf, Some(&[0.5, 0.5])).unwrap();
        assert!(d.dist.unwrap().abs() < 1e-15);
        let d = weight_diagnostics(&weights(vec![1.0, 0.0, 0.0]), &inf, Some(&[0.5, 0.5])).unwrap();
        assert_eq!(d.dist, None);
        let d = weight_diagnostics(&weights(vec![0.0, 1.0, 0.0]), &inf, Some(&[0.5, 0.5])).unwrap();
        assert!((d.dist.unwrap() - 0.5f64.sqrt()).abs() < 1e-15);

        let stranger: BTreeSet<_> = [CandidateId { layer: 9, dim: 1 }].into();
        assert!(weight_diagnostics(&w, &stranger, None).is_err());
        assert!(weight_diagnostics(&w, &inf, Some(&[1.0])).is_err());
    }

    proptest! {
        #[test]
        fn tau_hat_and_rest_sum_to_one(raw in proptest::collection::vec(0.0f64..1.0, 2..8), mask in any::<u8>()) {
            let total: f64 = raw.iter().sum::<f64>() + 1e-9;
            let w = weights(raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / total).collect());
            let inf: BTreeSet<_> = w.index.iter().enumerate().filter(|(k, _)| mask >> (k % 8) & 1 == 1).map(|(_, c)| *c).collect();
            let d = weight_diagnostics(&w, &inf, None).unwrap();
            let rest: f64 = w.index.iter().zip(&w.w).filter(|(c, _)| !inf.contains(c)).map(|(_, v)| v).sum();
            prop_assert!((d.tau_hat + rest - 1.0).abs() < 1e-10);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d.tau_hat));
        }
    }

    #[test]
    fn simple_average_examples() {
        let n = 4;
        let mut preds = CandidatePredictions::new(2, vec![1], 2);
        let p = SymMatrix::from_fn(n, |i, j| (i + j) as f64);
        let q = SymMatrix::from_fn(n, |i, j| (i * j) as f64);
        for (layer, m) in [(0, &p), (1, &q)] {
            preds.insert_full(
                layer,
                0,
                MeanMatrix {
                    means: m.clone(),
                    provenance: Provenance { layer, dim: 1, fold: None },
                },
            );
        }
        let es = edges(n);
        let avg = simp_ma(&preds, &es).unwrap();
        for &e in &es {
            assert!((avg[&e] - (p.get(e) + q.get(e)) / 2.0).abs() < 1e-12);
        }
        let single = preds.select(&[1], &[1]).unwrap();
        let one = simp_ma(&single, &es).unwrap();
        for &e in &es {
            assert_eq!(one[&e], q.get(e));
        }
    }

    #[test]
    fn target_only_is_the_degenerate_pipeline() {
        let (ds, _) = SimScenario::example1(30, 2, 1.0, EdgeFamily::GaussianIdentity, 4)
            .generate(0)
            .unwrap();
        let alone = target_only(&ds, 2, &FitOptions::default(), 17).unwrap();
        let again = target_only(&ds, 2, &FitOptions::default(), 17).unwrap();
        assert_eq!(alone, again);
        let cfg = TransferMaConfig::new(vec![2], 5, 17);
        let res = run_transfer_ma(&ds.select_layers(&[0]).unwrap(), &cfg).unwrap();
        assert_eq!(res.predictions, alone);
    }

    #[test]
    fn joint_fit_of_one_layer_matches_single_fit() {
        let (ds, _) = SimScenario::example1(25, 2, 0.0, EdgeFamily::GaussianIdentity, 9)
            .generate(0)
            .unwrap();
        let ds = ds.select_layers(&[0]).unwrap();
        let opts = FitOptions {
            init: crate::lsm::Init::SpectralWarmStart,
            ..FitOptions::default()
        };
        let joint = fit_fmlsm(&ds, 2, &opts, 3).unwrap();
        assert_eq!(joint.len(), 1);
        let single = crate::lsm::fit(ds.target(), EdgeFamily::GaussianIdentity, 2, &opts).unwrap();
        let jm = &joint[0];
        let nll_joint: f64 = ds.target().iter().map(|(e, a)| 0.5 * jm.get(e).powi(2) - a * jm.get(e)).sum();
        assert!((nll_joint - single.objective).abs() <= 1e-9 * single.objective.abs());
    }

    #[test]
    fn summaries() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(median(&[5.0]), Some(5.0));
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[1.0, f64::NAN]), None);
    }
}
