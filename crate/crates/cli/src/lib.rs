//! Experiment runner behind the `snpekit` binary.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod presets;

pub use commands::{cmd_compare, cmd_eval, cmd_infer, cmd_simulate, EvalQuery, GridSpec, RunOptions};
pub use config::{ExperimentConfig, LoadedConfig};
pub use error::{CliError, Result};
