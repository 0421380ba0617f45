//! Pipeline orchestration and run configuration for the `peergraph` binary.

pub mod config;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{run_pipeline, RunArtifacts};
