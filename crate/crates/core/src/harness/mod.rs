//! Monte Carlo orchestration.

pub mod config;
pub mod output;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, ModelBlock, SpatialMode, XiSpec};
pub use output::{summarize, write_outputs, ColumnSummary, Summary};
pub use report::{estimate_dataset, EstimationReport};
pub use run::{run_replicates, OuRecord, ReplicateRecord, ReplicateTable, SpdeContext};
