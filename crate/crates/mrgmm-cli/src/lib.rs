//! Command-line front end for misspecification-robust GMM: estimation on
//! CSV data, bootstrap confidence intervals, Monte Carlo coverage and power
//! studies, and a selftest.
//!
//! The binary reads flags (optionally seeded from a flat `key = value`
//! config file; flags win) and writes `results.csv`, `table.txt`,
//! `manifest.json`, and — for sweeps and power studies — `figure.svg` into
//! the output directory. Given the same configuration and seed, the bytes of
//! `results.csv` do not depend on the thread count.

pub mod output;
pub mod run;
pub mod selftest;
pub mod settings;
pub mod svg;

pub use run::{run, RunError};
pub use settings::{RawSettings, RunConfig};
