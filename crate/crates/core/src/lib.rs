//! Thresholding estimators for functionals of sparse covariance and
//! correlation matrices.
//!
//! The crate covers the full chain from data to decision:
//!
//! - [`matgen`]: structured covariance models and seeded Gaussian samplers.
//! - [`estimators`]: empirical covariance, entrywise thresholding, the
//!   off-diagonal quadratic functional, the diagonal U-statistic, row-wise
//!   `l_r` functionals and the non-thresholded baselines.
//! - [`cvselect`]: split-sample cross-validation of the threshold.
//! - [`twosample`]: high-dimensional two-sample mean tests.
//! - [`factortest`]: the correlation-ignoring Wald test for zero pricing
//!   errors in multifactor models.
//! - [`detect`]: correlation detection through the thresholded `l_r`
//!   functional.
//! - [`rates`]: closed-form rate and threshold formulas.
//! - [`harness`]: Monte Carlo experiments, CSV I/O and configuration used by
//!   the `sparsecov` binary.

pub mod cvselect;
pub mod detect;
pub mod error;
pub mod estimators;
pub mod factortest;
pub mod harness;
pub mod linalg;
pub mod matgen;
pub mod rates;
pub mod rng;
pub mod stats;
pub mod twosample;

pub use error::{Error, Result};
pub use estimators::{FunctionalEstimate, FunctionalKind, ThresholdMode, ThresholdSpec};
pub use matgen::{Centering, CovarianceModel, ModelKind, SampleMatrix};
pub use rng::RngSeed;
