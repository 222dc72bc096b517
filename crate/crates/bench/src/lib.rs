//! Seeded fixtures shared by the benchmarks.

use trgs_core::dro::{Conjugate, DroDualObjective};
use trgs_core::problems::{logistic_oracle, make_imbalanced_mixture, LogisticOracle, IMBALANCE_RATIOS};
use trgs_core::{Matrix, SeededRng, Vector};

/// Random symmetric matrix and gradient of size `n`.
pub fn tr_instance(n: usize, seed: u64) -> (Vector, Matrix) {
    let mut rng = SeededRng::from_seed(seed);
    let m = Matrix::from_fn(n, n, |_, _| rng.normal());
    let b = (&m + m.transpose()) * 0.5;
    let g = Vector::from_fn(n, |_, _| rng.normal());
    (g, b)
}

/// Softmax regression on the imbalanced ten-class mixture.
pub fn logistic(features: usize, base_per_class: usize) -> LogisticOracle {
    let data = make_imbalanced_mixture(features, 10, base_per_class, &IMBALANCE_RATIOS, 0).expect("valid mixture");
    logistic_oracle(data).expect("valid data")
}

pub fn dro_logistic(features: usize, base_per_class: usize) -> DroDualObjective<LogisticOracle> {
    DroDualObjective::new(logistic(features, base_per_class), Conjugate::SmoothedChiSquare, 1.0).expect("valid objective")
}
