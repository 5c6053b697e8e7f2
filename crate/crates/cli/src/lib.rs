//! Batch front end of `specnorm`: configuration files, CSV ingestion, the
//! estimation/inference pipeline and JSON reports.

pub mod config;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod report;

pub use config::{parse_config, DataSource, RunConfig};
pub use error::{Failure, Stage};
pub use ingest::{ingest_csv, read_csv, write_csv};
pub use pipeline::{run_estimate, run_measure, run_pipeline, run_quantiles};
