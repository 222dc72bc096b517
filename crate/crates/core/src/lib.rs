//! Trust-region methods for stochastic nonconvex optimization under
//! generalized `(L0, L1)` and second-order smoothness.
//!
//! The crate is organized bottom-up:
//!
//! - [`oracle`]: stochastic oracles, i.i.d. batches, batch gradient / Hessian /
//!   Hessian-vector estimators.
//! - [`subproblem`]: exact trust-region subproblem solvers (normalized,
//!   clipped, general symmetric with hard case, and the 2-D metric model).
//! - [`estimators`]: SPIDER recursive gradients, Hessian batch sizing and
//!   empirical estimation of smoothness and variance constants.
//! - [`dro`]: the penalized DRO dual objective with smoothed divergence
//!   conjugates, its derivatives and the inner η minimization.
//! - [`problems`]: analytic test oracles and a synthetic imbalanced
//!   classification generator.
//! - [`algorithms`]: the run drivers and parameter schedules.
//! - [`diagnostics`]: stationarity certificates, finite-difference checks,
//!   Hessian concentration trials and per-class accuracy.

pub mod algorithms;
pub mod diagnostics;
pub mod dro;
pub mod error;
pub mod estimators;
pub mod oracle;
pub mod problems;
pub mod profile;
pub mod rng;
pub mod subproblem;

pub use error::{Error, Result};
pub use oracle::{
    batch_gradient, batch_hessian, batch_value, draw_batch, hvp, Batch, Capabilities, Matrix, SampleCount,
    SampleId, StochasticOracle, Vector,
};
pub use profile::{Iterate, SecondOrderConstants, SmoothnessProfile};
pub use rng::{Purpose, SeededRng};
pub use subproblem::{
    kkt_and_decrease, solve_2d_metric, solve_clipped, solve_general, solve_normalized, MetricStep, Subproblem2D,
    TrustRegionStep,
};
