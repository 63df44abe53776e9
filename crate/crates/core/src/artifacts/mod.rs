//! Shared artifact plumbing: tensors with exact persistence, config hashing,
//! run directory layout, and metric reports.

pub mod config;
pub mod report;
pub mod run_dir;
pub mod tensor;

pub use config::{config_hash, short_hash};
pub use report::{render_metric_table, MetricEntry, MetricReport};
pub use run_dir::RunDirs;
pub use tensor::{load_tensor, save_tensor, ArtifactRef, Tensor, TSR_FORMAT_VERSION};
