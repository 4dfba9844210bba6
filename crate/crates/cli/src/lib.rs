//! Configuration files, multi-seed experiments and result files for the
//! `estd3` trainer.

pub mod config_file;
pub mod curves;
pub mod experiment;
pub mod summary;

pub use config_file::{parse_config, parse_config_str, ConfigError};
pub use curves::{read_curve, trailing_mean, write_curve, CurveRow};
pub use experiment::{report, run_experiment, OutputOptions};
pub use summary::{ExperimentSummary, SeedFailure, SeedScore};
