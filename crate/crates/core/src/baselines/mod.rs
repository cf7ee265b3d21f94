//! Comparison methods: rejection and SMC ABC, and an MCMC reference for the GLM.

mod abc;
mod mcmc;
mod smoothness;

pub use abc::{abc_distance, pilot_scaling, rejection_abc, smc_abc, AbcSamples, SmcConfig, SmcState};
pub use mcmc::{adaptive_metropolis, glm_reference_mcmc, split_rhat, McmcChain, McmcConfig, McmcResult};
pub use smoothness::{glm_smoothness_prior, second_difference, SmoothnessAugmentation};
