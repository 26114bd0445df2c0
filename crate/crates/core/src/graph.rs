//! Edge bookkeeping: canonical node pairs, observed layers and packed
//! symmetric matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::family::EdgeFamily;
use crate::rng::RngStream;

/// An unordered node pair stored with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId {
    pub i: u32,
    pub j: u32,
}

impl EdgeId {
    /// Canonical pair for `{a, b}`. Self-loops are rejected.
    pub fn new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::invalid(format!("self-loop ({a}, {a}) is not allowed")));
        }
        Ok(Self::canonical(a, b))
    }

    /// Canonicalizes without the self-loop check; callers guarantee `a != b`.
    #[inline]
    pub fn canonical(a: usize, b: usize) -> Self {
        debug_assert_ne!(a, b);
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        EdgeId {
            i: i as u32,
            j: j as u32,
        }
    }

    #[inline]
    pub fn i(self) -> usize {
        self.i as usize
    }

    #[inline]
    pub fn j(self) -> usize {
        self.j as usize
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Number of unordered pairs on `n` nodes.
#[inline]
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// All `n(n−1)/2` pairs in lexicographic order.
pub fn all_pairs(n: usize) -> impl Iterator<Item = EdgeId> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| EdgeId::canonical(i, j)))
}

/// Symmetric `n × n` matrix with an undefined diagonal, stored as the
/// packed strict upper triangle in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self::filled(n, 0.0)
    }

    pub fn filled(n: usize, value: f64) -> Self {
        SymMatrix {
            n,
            data: vec![value; pair_count(n)],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(pair_count(n));
        for i in 0..n {
            for j in i + 1..n {
                data.push(f(i, j));
            }
        }
        SymMatrix { n, data }
    }

    pub fn from_packed(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != pair_count(n) {
            return Err(Error::invalid(format!(
                "packed length {} does not match n = {n}",
                data.len()
            )));
        }
        Ok(SymMatrix { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn index(&self, e: EdgeId) -> usize {
        let (i, j) = (e.i(), e.j());
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    pub fn get(&self, e: EdgeId) -> f64 {
        self.data[self.index(e)]
    }

    /// Entry `(a, b)` for `a != b`, in either order.
    #[inline]
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.get(EdgeId::canonical(a, b))
    }

    #[inline]
    pub fn set(&mut self, e: EdgeId, value: f64) {
        let k = self.index(e);
        self.data[k] = value;
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        SymMatrix {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (EdgeId, f64)> + '_ {
        all_pairs(self.n).zip(self.data.iter().copied())
    }
}

/// One layer's observed edges and their values.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerData {
    n: usize,
    values: BTreeMap<EdgeId, f64>,
}

impl LayerData {
    pub fn new(n: usize, values: BTreeMap<EdgeId, f64>) -> Result<Self> {
        for e in values.keys() {
            if e.i >= e.j || e.j() >= n {
                return Err(Error::invalid(format!("edge {e} is out of range for n = {n}")));
            }
        }
        Ok(LayerData { n, values })
    }

    /// Builds a layer from arbitrary-order pairs, rejecting duplicates.
    pub fn from_triples(n: usize, triples: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (a, b, v) in triples {
            let e = EdgeId::new(a, b)?;
            if values.insert(e, v).is_some() {
                return Err(Error::invalid(format!("duplicate edge {e}")));
            }
        }
        Self::new(n, values)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, e: EdgeId) -> Option<f64> {
        self.values.get(&e).copied()
    }

    pub fn contains(&self, e: EdgeId) -> bool {
        self.values.contains_key(&e)
    }

    /// Observed edges with values, in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (EdgeId, f64)> + '_ {
        self.values.iter().map(|(&e, &v)| (e, v))
    }

    pub fn observed(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.values.keys().copied()
    }

    pub fn values(&self) -> &BTreeMap<EdgeId, f64> {
        &self.values
    }

    /// Pairs not observed in this layer.
    pub fn missing(&self) -> Vec<EdgeId> {
        all_pairs(self.n).filter(|e| !self.values.contains_key(e)).collect()
    }

    /// Sub-layer keeping only edges accepted by `keep`.
    pub fn restrict(&self, mut keep: impl FnMut(EdgeId) -> bool) -> LayerData {
        LayerData {
            n: self.n,
            values: self
                .values
                .iter()
                .filter(|(&e, _)| keep(e))
                .map(|(&e, &v)| (e, v))
                .collect(),
        }
    }

    pub fn validate(&self, family: EdgeFamily) -> Result<()> {
        for (e, v) in self.iter() {
            family
                .validate_value(v)
                .map_err(|err| Error::invalid(format!("edge {e}: {err}")))?;
        }
        Ok(())
    }
}

/// `R` layers on a shared node set. Layer 0 is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilayerDataset {
    n: usize,
    layers: Vec<LayerData>,
    families: Vec<EdgeFamily>,
}

impl MultilayerDataset {
    pub fn new(layers: Vec<LayerData>, families: Vec<EdgeFamily>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("a dataset needs at least one layer"))?;
        let n = first.n();
        if families.len() != layers.len() {
            return Err(Error::invalid(format!(
                "{} layers but {} families",
                layers.len(),
                families.len()
            )));
        }
        for (r, (layer, family)) in layers.iter().zip(&families).enumerate() {
            if layer.n() != n {
                return Err(Error::invalid(format!(
                    "layer {r} has {} nodes, expected {n}",
                    layer.n()
                )));
            }
            layer.validate(*family)?;
        }
        Ok(MultilayerDataset { n, layers, families })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, r: usize) -> &LayerData {
        &self.layers[r]
    }

    pub fn layers(&self) -> &[LayerData] {
        &self.layers
    }

    pub fn family(&self, r: usize) -> EdgeFamily {
        self.families[r]
    }

    pub fn families(&self) -> &[EdgeFamily] {
        &self.families
    }

    pub fn target(&self) -> &LayerData {
        &self.layers[0]
    }

    /// Copy holding only the listed layers, in the given order.
    pub fn select_layers(&self, which: &[usize]) -> Result<Self> {
        let mut layers = Vec::with_capacity(which.len());
        let mut families = Vec::with_capacity(which.len());
        for &r in which {
            if r >= self.layers.len() {
                return Err(Error::invalid(format!("layer {r} does not exist")));
            }
            layers.push(self.layers[r].clone());
            families.push(self.families[r]);
        }
        Self::new(layers, families)
    }

    /// Copy with `layer` appended as a new auxiliary layer.
    pub fn with_layer(&self, layer: LayerData, family: EdgeFamily) -> Result<Self> {
        let mut layers = self.layers.clone();
        let mut families = self.families.clone();
        layers.push(layer);
        families.push(family);
        Self::new(layers, families)
    }
}

/// Uniform random split of `all_pairs` into observed and missing sets, with
/// `round(rate · |all_pairs|)` missing.
pub fn mask_edges(
    all_pairs: &BTreeSet<EdgeId>,
    rate: f64,
    rng: &RngStream,
) -> Result<(BTreeSet<EdgeId>, BTreeSet<EdgeId>)> {
    if all_pairs.is_empty() {
        return Err(Error::invalid("cannot mask an empty edge set"));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!("missing rate {rate} must lie in (0, 1)")));
    }
    let total = all_pairs.len();
    let n_missing = (rate * total as f64).round() as usize;
    let mut chosen = vec![false; total];
    let mut g = rng.rng();
    for k in index::sample(&mut g, total, n_missing) {
        chosen[k] = true;
    }
    let mut observed = BTreeSet::new();
    let mut missing = BTreeSet::new();
    for (e, is_missing) in all_pairs.iter().zip(chosen) {
        if is_missing {
            missing.insert(*e);
        } else {
            observed.insert(*e);
        }
    }
    Ok((observed, missing))
}
