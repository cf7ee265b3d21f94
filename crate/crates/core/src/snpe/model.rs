//! Simulator plus feature extractor, as seen by the inference loop.

use crate::error::{Error, Result};
use crate::features::{autapse_features, glm_features, gm_features, gru_inputs, hh_features, FeatureVector, GmFeatureMode, HhFeatureSpec};
use crate::rng::rng_from_seed;
use crate::simulators::{simulate_autapse, simulate_glm, simulate_gm, simulate_hh, AutapseSpec, GlmDesign, GmSpec, HhSpec};

/// Output of one simulation as consumed by training.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub features: FeatureVector,
    /// Network input sequence for a recurrent front end.
    pub sequence: Option<Vec<f64>>,
}

/// `(θ, seed) → x`. Implementations must be pure functions of their inputs.
pub trait Model: Sync {
    fn theta_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Simulation>;
}

fn check_theta(model: &dyn Model, theta: &[f64]) -> Result<()> {
    if theta.len() != model.theta_dim() {
        return Err(Error::Simulation(format!("expected {} parameters, got {}", model.theta_dim(), theta.len())));
    }
    Ok(())
}

pub struct GmModel {
    pub spec: GmSpec,
    pub mode: GmFeatureMode,
}

impl Model for GmModel {
    fn theta_dim(&self) -> usize {
        1
    }

    fn feature_dim(&self) -> usize {
        self.mode.dim(self.spec.samples_per_draw)
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Simulation> {
        check_theta(self, theta)?;
        let draws = simulate_gm(&self.spec, theta[0], &mut rng_from_seed(seed));
        Ok(Simulation { features: gm_features(&draws, self.mode)?, sequence: None })
    }
}

pub struct GlmModel {
    pub design: GlmDesign,
}

impl Model for GlmModel {
    fn theta_dim(&self) -> usize {
        self.design.dim
    }

    fn feature_dim(&self) -> usize {
        self.design.dim
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Simulation> {
        check_theta(self, theta)?;
        let y = simulate_glm(&self.design, theta, &mut rng_from_seed(seed))?;
        Ok(Simulation { features: glm_features(&y, &self.design)?, sequence: None })
    }
}

pub struct AutapseModel {
    pub spec: AutapseSpec,
}

impl Model for AutapseModel {
    fn theta_dim(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        1
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Simulation> {
        check_theta(self, theta)?;
        let out = simulate_autapse(&self.spec, theta, &mut rng_from_seed(seed))?;
        Ok(Simulation { features: autapse_features(&out), sequence: None })
    }
}

pub struct HhModel {
    pub spec: HhSpec,
    pub features: HhFeatureSpec,
    /// Subsampling stride of the recurrent input; `None` uses hand features only.
    pub gru_stride: Option<usize>,
}

impl Model for HhModel {
    fn theta_dim(&self) -> usize {
        12
    }

    fn feature_dim(&self) -> usize {
        self.features.dim()
    }

    fn simulate(&self, theta: &[f64], seed: u64) -> Result<Simulation> {
        check_theta(self, theta)?;
        let out = simulate_hh(&self.spec, theta, &mut rng_from_seed(seed))?;
        let mut features = hh_features(&out.trace, &self.features);
        if out.bad {
            features = FeatureVector::bad(self.features.dim());
        }
        let sequence = self.gru_stride.map(|s| gru_inputs(&out.trace, s, self.spec.stimulus.scale()));
        Ok(Simulation { features, sequence })
    }
}
