//! Shared fixtures for the benchmarks.

use drl_core::data::{make_synthetic, SyntheticSpec};
use drl_core::{Dataset, ModelParams, RngState};

/// Uniform losses in `[0, 1)` of length `m`, reproducible from `seed`.
pub fn random_losses(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngState::new(seed);
    (0..m).map(|_| rng.uniform()).collect()
}

/// A synthetic classification problem with a fixed random parameter vector.
pub fn problem(n: usize, d: usize) -> (Dataset, ModelParams) {
    let data = make_synthetic(&SyntheticSpec::new(n, d, 2.0, 0.05, 9)).expect("valid synthetic spec");
    let theta = ModelParams::random_uniform(d, &mut RngState::new(1));
    (data, theta)
}
