//! IO companion for the engine core: task files, on-disk raster formats,
//! remote provider adapters, the pipeline orchestrator, and reporting.

pub mod formats;
pub mod http;
pub mod obj;
pub mod parallel;
pub mod pipeline;
pub mod providers;
pub mod report;
pub mod taskfile;

pub use pipeline::{PipelineError, RunManifest, RunOptions};
pub use taskfile::load_task;
