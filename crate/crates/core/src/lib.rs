//! Transfer learning for link prediction in multilayer networks by
//! cross-validated model averaging.
//!
//! Each layer is fitted with an inner-product latent space model at several
//! candidate latent dimensions. The candidates are combined with weights on
//! the probability simplex chosen by K-fold cross-validation on the target
//! layer's observed edges. Auxiliary layers only ever contribute fitted
//! mean matrices, so their raw edges can stay with whoever owns them (see
//! [`pipeline`] and [`protocol`]).

pub mod averaging;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod family;
pub mod graph;
pub mod io;
pub mod lsm;
pub mod pipeline;
pub mod protocol;
pub mod rng;
pub mod simgen;

pub use nalgebra;

pub use averaging::{
    build_cv_problem, make_folds, predict_averaged, simplex_project, solve_weights, CandidateId,
    CandidatePredictions, CvProblem, FoldAssignment, MeanMatrix, SolverOptions, WeightVector,
};
pub use error::{Error, Result};
pub use eval::{smpe, smpr, MetricKind, MetricReport};
pub use family::{b_prime, nll_edge, EdgeFamily};
pub use graph::{all_pairs, mask_edges, EdgeId, LayerData, MultilayerDataset, SymMatrix};
pub use lsm::{fit, predict_means, FitOptions, Init, LsmFit, LsmParams, Provenance, ThetaMatrix};
pub use pipeline::{run_transfer_ma, Diagnostics, Execution, TransferMaConfig, TransferMaResult, WorkerCommand};
pub use rng::{Purpose, RngStream, StreamId};
pub use simgen::{Example, GroundTruth, SimScenario};

/// Version string recorded in run manifests and protocol headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
