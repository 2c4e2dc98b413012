//! Shared fixtures for the benchmarks.

use lrvb::{fit, random_truth, simulate, Dataset, GmmTruth, Init, SolverConfig, VariationalState};

/// A simulated data set with its converged mean-field fit.
pub struct Fixture {
    pub truth: GmmTruth,
    pub data: Dataset,
    pub state: VariationalState,
}

impl Fixture {
    pub fn new(k: usize, p: usize, n: usize, seed: u64) -> Self {
        let truth = random_truth(k, p, 3.5, seed).expect("valid truth");
        let data = simulate(&truth, n, seed + 1).expect("valid data");
        let mut cfg = SolverConfig::new(k, Init::Truth { truth: truth.clone() });
        cfg.tol = 1e-8;
        let state = fit(&data, &cfg).expect("fit");
        Self { truth, data, state }
    }
}
