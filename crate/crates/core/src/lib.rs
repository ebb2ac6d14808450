//! Regime-switching factor models for extracting underlying inflation from a
//! large panel of disaggregated price series.
//!
//! The crate is organised around the estimation pipeline:
//!
//! * [`panel`] holds the time-series panel, CSV ingestion, inflation-rate
//!   transforms, standardization and a synthetic data generator.
//! * [`factor`] estimates static principal-component factors.
//! * [`breaks`] searches for multiple structural breaks in the factor second
//!   moments and runs the sup-F / Dmax / sequential testing battery.
//! * [`msfactor`] fits a Markov-switching factor model by EM with Hamilton
//!   filtering and Kim smoothing.
//! * [`indicator`] maps factors to a core-inflation indicator.
//! * [`evaluate`] runs expanding-window vintages and computes revision,
//!   forecast-error and Model Confidence Set statistics.
//!
//! Data-parallel loops (Monte Carlo replications, bootstrap draws, EM starts,
//! vintages, segment-cost tables) go through [`exec::Execution`]. With the
//! `parallel` feature disabled every loop runs sequentially.

pub mod breaks;
pub mod error;
pub mod evaluate;
pub mod exec;
pub mod factor;
pub mod indicator;
pub(crate) mod linalg;
pub mod msfactor;
pub mod panel;

pub use error::{Error, Result};
pub use exec::Execution;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
