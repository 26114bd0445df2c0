//! Fitted-model export: one layer's latent space parameters as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use transferma_core::io::atomic_write;
use transferma_core::lsm::LsmFit;
use transferma_core::nalgebra::{DMatrix, DVector};
use transferma_core::{EdgeFamily, Error, LsmParams, Result};

use crate::manifest::read_toml;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub software_version: String,
    pub family: EdgeFamily,
    pub n: usize,
    pub d: usize,
    /// 1-based layer index in the source file.
    pub layer: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Latent positions, one row per node.
    pub u: Vec<Vec<f64>>,
}

impl ModelRecord {
    pub fn from_fit(fit: &LsmFit, family: EdgeFamily, layer: usize, seed: u64) -> Self {
        let p = &fit.params;
        ModelRecord {
            software_version: transferma_core::VERSION.to_string(),
            family,
            n: p.n(),
            d: p.d(),
            layer,
            seed,
            objective: fit.objective,
            iterations: fit.iterations,
            converged: fit.converged,
            alpha: p.alpha.iter().copied().collect(),
            lambda: p.lambda.iter().copied().collect(),
            u: p.u.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn params(&self) -> Result<LsmParams> {
        if self.alpha.len() != self.n || self.lambda.len() != self.d || self.u.len() != self.n {
            return Err(Error::invalid("model record sizes disagree with n and d"));
        }
        if self.u.iter().any(|r| r.len() != self.d) {
            return Err(Error::invalid("latent position rows must have d entries"));
        }
        let flat: Vec<f64> = self.u.iter().flatten().copied().collect();
        Ok(LsmParams {
            alpha: DVector::from_vec(self.alpha.clone()),
            u: DMatrix::from_row_slice(self.n, self.d, &flat),
            lambda: DVector::from_vec(self.lambda.clone()),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::invalid(format!("cannot encode model: {e}")))?;
        atomic_write(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_toml(path)
    }
}
