//! Batch research engine that turns per-document sparse feature activations
//! into yearly company-similarity clusterings, evaluates them against
//! return-correlation and pairs-trading criteria, and produces per-cluster
//! feature-importance ledgers.
//!
//! The pipeline, bottom to top:
//!
//! 1. [`corpus`] loads and validates the company panel (metadata, monthly
//!    logged returns, daily prices) and builds the SIC/BISC benchmark
//!    partitions.
//! 2. [`sparsefeat`] aggregates token-level sparse activations into
//!    per-document summed vectors.
//! 3. [`pca`] fits one global projection and maps sparse vectors to dense
//!    low-dimensional ones.
//! 4. [`graphcluster`] turns each year's dense vectors into a normalized
//!    cosine-distance graph, builds the MST, and cuts it at a threshold.
//! 5. [`calib`] picks the threshold: fixed two-fold temporal calibration or
//!    a rolling walk-forward variant.
//! 6. [`metrics`] scores any clustering by mean intra-cluster return
//!    correlation.
//! 7. [`cointegration`] and [`backtest`] run the cluster-conditioned pairs
//!    trade: Engle-Granger selection, sigma-band simulation, portfolio
//!    accounting, Sharpe.
//! 8. [`interp`] explains each cluster by activation-patching feature
//!    impacts and greedy important-set selection.
//! 9. [`synth`] generates ground-truth universes that power the test
//!    oracles.

pub mod backtest;
pub mod calib;
pub mod cointegration;
pub mod corpus;
mod error;
pub mod graphcluster;
pub mod interp;
pub mod metrics;
#[cfg(feature = "test-oracles")]
pub mod oracles;
pub mod pca;
pub mod sparsefeat;
pub mod synth;

pub use error::{Error, Result};
