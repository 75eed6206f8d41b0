//! Experiment driver for transductive novelty detection: dataset loaders,
//! checkpoints, configuration files, reports and the staged pipeline behind
//! the `transduct` command.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod report;

pub use checkpoint::{Checkpoint, TrainedNetworks};
pub use config::{ExperimentConfig, Mode};
pub use datasets::Dataset;
pub use error::{Error, Result};
pub use experiment::{run_experiment, RunOutcome};
pub use report::EvalReport;
