//! Run manifests: a TOML echo of the job, enough to rerun it, plus the
//! outputs it produced and how long each stage took.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use transferma_core::io::atomic_write;
use transferma_core::simgen::SimScenario;
use transferma_core::{EdgeFamily, Error, Result};

use crate::{InitArg, Mode};

pub const FILE_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    /// Pool size used; outputs do not depend on it.
    pub threads: usize,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub job: Job,
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<RunDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Job {
    Simulate(SimulateJob),
    Run(RunJob),
    Reproduce(ReproduceJob),
    Holdout(HoldoutJob),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateJob {
    pub first_replicate: u32,
    pub replicates: u32,
    pub scenario: SimScenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunJob {
    /// Absolute path of the edge-list file.
    pub data: PathBuf,
    pub dims: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    pub mode: Mode,
    pub init: InitArg,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Worker program; absent means this executable's `worker` subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceJob {
    pub figure: String,
    pub replicates: u32,
    pub seed: u64,
    pub family: EdgeFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutJob {
    /// Absolute path of the complete edge-list file.
    pub data: PathBuf,
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub cv_value: f64,
    pub kkt_residual: f64,
    pub solver_iterations: usize,
    pub fold_sizes: Vec<usize>,
    pub fits: usize,
    pub unconverged_fits: usize,
}

impl RunManifest {
    pub fn new(job: Job, threads: usize) -> Self {
        RunManifest {
            software_version: transferma_core::VERSION.to_string(),
            threads,
            outputs: Vec::new(),
            job,
            timings: BTreeMap::new(),
            diagnostics: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(FILE_NAME);
        let text = toml::to_string(self).map_err(|e| Error::invalid(format!("cannot encode manifest: {e}")))?;
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_toml(path)
    }
}

/// Reads a TOML file, reporting syntax and schema errors with their line.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let job = Job::Run(RunJob {
            data: PathBuf::from("/data/net.txt"),
            dims: vec![1, 2, 3],
            k: 10,
            seed: 7,
            mode: Mode::Workers,
            init: InitArg::Spectral,
            max_iters: 2000,
            rel_tol: 1e-6,
            worker: None,
        });
        let mut m = RunManifest::new(job, 3);
        m.outputs = vec!["predictions.csv".into()];
        m.timings.insert("fits".into(), 1.25);
        m.diagnostics = Some(RunDiagnostics {
            cv_value: 0.1 + 0.2,
            kkt_residual: 1e-13,
            solver_iterations: 12,
            fold_sizes: vec![3, 3, 2],
            fits: 40,
            unconverged_fits: 0,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
    }

    #[test]
    fn simulate_job_round_trips() {
        let job = Job::Simulate(SimulateJob {
            first_replicate: 4,
            replicates: 2,
            scenario: SimScenario::example5(60, 3, 1.5, 11),
        });
        let m = RunManifest::new(job, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "software_version = \"x\"\nthreads = \"many\"\n").unwrap();
        match RunManifest::read(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }
}
