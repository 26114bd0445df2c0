//! Fixtures shared by the benchmarks.

use rand::Rng;
use rand_distr::StandardNormal;
use transferma_core::nalgebra::{DMatrix, DVector};
use transferma_core::simgen::SimScenario;
use transferma_core::{all_pairs, CandidateId, CvProblem, EdgeFamily, MultilayerDataset, Purpose, RngStream, StreamId};

/// Example 1 dataset with `n` nodes and four layers.
pub fn example1_dataset(n: usize, family: EdgeFamily) -> MultilayerDataset {
    SimScenario::example1(n, 4, 3.0, family, 7)
        .generate(0)
        .expect("valid scenario")
        .0
}

/// Weight problem whose response is a noisy mix of the first two columns.
pub fn random_cv_problem(rows: usize, cols: usize, seed: u64) -> CvProblem {
    let mut rng = RngStream::new(seed, StreamId::new(Purpose::Fit)).rng();
    let design = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = DVector::from_fn(rows, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let response = 0.6 * design.column(0) + 0.4 * design.column(1.min(cols - 1)) + noise;
    CvProblem {
        design,
        response,
        columns: (0..cols).map(|c| CandidateId { layer: c / 3, dim: c % 3 + 1 }).collect(),
        edges: all_pairs(rows + 1).take(rows).collect(),
    }
}

/// Random vector to project onto the simplex.
pub fn random_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, StreamId::new(Purpose::Fit)).rng();
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}
