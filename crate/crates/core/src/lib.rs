//! Rodeo: regularization of derivative expectation operator.
//!
//! Greedy per-coordinate bandwidth selection for local linear (and kernel)
//! regression. Starting from a large bandwidth in every coordinate, the
//! algorithm repeatedly tests the derivative of the local estimate with
//! respect to each bandwidth and shrinks only those coordinates whose
//! derivative clears a noise-calibrated threshold. Irrelevant coordinates keep
//! large bandwidths, so they are effectively smoothed away.
//!
//! Module map:
//!
//! - [`dataset`]: data model, CSV I/O, synthetic generators, RNG contract
//! - [`kernels`]: kernel values, product weights and their bandwidth derivatives
//! - [`loclin`]: local linear fit, effective kernel, derivative statistic
//! - [`rodeo`]: hard and soft thresholding rodeo at a single point
//! - [`sigma`]: nearest-pair noise estimators
//! - [`variants`]: global and greedy rodeo, linear prefit
//! - [`harness`]: LOOCV baseline, Monte Carlo experiments, reports

pub mod dataset;
pub mod error;
pub mod harness;
pub mod kernels;
mod linalg;
pub mod loclin;
pub mod rodeo;
pub mod sigma;
pub mod variants;

pub use dataset::{Dataset, RngSeed, SyntheticSpec, Variant};
pub use error::{Result, RodeoError};
pub use kernels::KernelSpec;
pub use loclin::{BandwidthVector, DerivativeStat, LocalFit, Smoother};
pub use rodeo::{RodeoConfig, RodeoResult, SigmaPolicy, StepAction, StepRecord};
