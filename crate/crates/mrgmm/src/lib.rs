//! Generalized-method-of-moments estimation and inference that remains valid
//! when the moment conditions are misspecified.
//!
//! The crate provides:
//!
//! - [`model`] — the moment-model contract (moment function, Jacobian, second
//!   derivatives), datasets, and sample moment means;
//! - [`estimate`] — the GMM criterion, weight-matrix recipes, a Newton
//!   minimizer with analytic derivatives, and the one-step/two-step
//!   estimators;
//! - [`variance`] — the conventional and the Hall-Inoue
//!   misspecification-robust sandwich covariance estimators;
//! - [`bootstrap`] — nonparametric iid resampling and three bootstrap t
//!   distributions: the non-recentered misspecification-robust (MR) scheme,
//!   the recentered Hall-Horowitz (HH) scheme, and the empirical-likelihood
//!   weighted Brown-Newey (BN) scheme;
//! - [`inference`] — t statistics, five confidence-interval constructions,
//!   asymptotic and bootstrap overidentification (J) tests, and
//!   size-corrected critical values;
//! - [`experiments`] — data-generating processes, pseudo-true values, and the
//!   Monte Carlo coverage/power harness.
//!
//! Everything downstream of a seed is deterministic: random streams are keyed
//! by `(seed, replication, draw)` through a counter-based generator, so
//! results are bitwise identical across thread counts.

pub mod bootstrap;
pub mod estimate;
mod error;
pub mod exec;
pub mod experiments;
pub mod inference;
mod kahan;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod stats;
pub mod variance;

pub use error::Error;

// Matrix types in the public API are nalgebra's; re-export for downstream
// crates.
pub use nalgebra;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
