//! Distributed kriging (DISK).
//!
//! Spatial data are split into `k` subsets, each subset is fitted with a
//! Gaussian-process (full-rank or modified predictive process) sampler whose
//! likelihood is raised to the power `n / m_j`, and the subset posteriors are
//! merged through their one-dimensional Wasserstein barycenter, which for
//! scalar quantities is the pointwise average of quantile functions.
//!
//! Module map:
//!
//! * [`kernels`]: covariance functions, low-rank knot projections and the
//!   jittered Cholesky used everywhere else.
//! * [`model`]: datasets, priors and the tempered marginal likelihood.
//! * [`partition`]: seeded random assignment of rows to subsets.
//! * [`sampler`]: the Metropolis-within-Gibbs subset sampler.
//! * [`combine`]: quantile averaging and inverse-CDF resampling.
//! * [`exact`]: the conjugate known-parameter posterior, Bayes risk
//!   decomposition, effective dimension and rate studies.
//! * [`bench`]: synthetic data generators and evaluation metrics.
//! * [`formats`]: the CSV and key=value file formats.

pub mod bench;
pub mod combine;
pub mod error;
pub mod exact;
pub mod formats;
pub mod kernels;
pub mod model;
pub mod partition;
pub mod rng;
pub mod sampler;

pub use error::{DiskError, Result};
