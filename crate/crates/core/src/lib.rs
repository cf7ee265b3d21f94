//! Sequential neural posterior estimation for simulator models.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod densities;
pub mod error;
pub mod features;
pub mod grad;
pub mod guard;
pub mod mdn;
pub mod rng;
pub mod simulators;
pub mod snpe;
#[cfg(test)]
mod test_models;

pub use baselines::{AbcSamples, McmcConfig, McmcResult, SmcConfig};
pub use densities::{BoxUniform, Distribution, GaussianMixture};
pub use error::{Error, Result};
pub use features::FeatureVector;
pub use grad::{AdamConfig, AdamState, Differentiable, GradReport, ParamStore, TrainConfig};
pub use guard::{GuardConfig, GuardNet};
pub use mdn::{BayesianMdn, MdnArchitecture, TrainingSet};
pub use simulators::Trace;
pub use snpe::{run_snpe, CalibrationKernel, Model, Observation, RoundDiagnostics, Simulation, SnpeConfig, SnpeRun};
