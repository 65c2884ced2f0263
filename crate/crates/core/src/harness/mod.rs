//! Datasets, set sampling, experiment orchestration and reports.

pub mod config;
pub mod dataset;
pub mod report;
pub mod runner;
pub mod sampling;
pub mod workspace;

pub use config::{ExperimentConfig, LengthBucket};
pub use dataset::{load_dataset, write_dataset};
pub use report::{emit_report, load_report, Aggregates, BucketReport, ExperimentReport, SetRecord};
pub use runner::{run_experiment, simulated_engine, Experiment};
pub use sampling::{draw_set, sample_sets};
pub use workspace::write_simulated_workspace;
