//! Library surface of the `dwbc-guard` pipeline: configuration, the run
//! orchestrator, and report emission. The binary in `main.rs` is a thin
//! argument-parsing layer over these modules.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, PipelineConfig};
pub use pipeline::{
    load_run, run_pipeline, ArtifactPaths, PipelineError, RunArtifacts,
};
pub use report::{emit_report, roc_auc, weight_auc, ReportRun};
