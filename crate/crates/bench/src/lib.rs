//! Fixtures shared by the estimator benchmarks.

use dwols_core::sim::{simulate_cohort, ScenarioConfig};
use dwols_core::LongitudinalDataset;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random weighted least-squares problem with an intercept column.
pub fn wls_problem(rows: usize, cols: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(
        rows,
        cols,
        |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) },
    );
    let y = DVector::from_fn(rows, |_, _| rng.random_range(-5.0..5.0));
    let w = (0..rows).map(|_| rng.random_range(0.1..3.0)).collect();
    (x, y, w)
}

pub fn cohort(scenario: u32, n: usize) -> LongitudinalDataset {
    let config = ScenarioConfig {
        n,
        seed: 1,
        ..ScenarioConfig::preset(scenario).expect("built-in scenario")
    };
    simulate_cohort(&config, 0).expect("simulated cohort")
}
