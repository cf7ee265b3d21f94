//! Declarative experiment description, one TOML file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snpekit_core::baselines::{glm_smoothness_prior, McmcConfig, SmcConfig, SmoothnessAugmentation};
use snpekit_core::features::{GmFeatureMode, HhFeatureSpec};
use snpekit_core::simulators::hh::{to_log_abs, HH_GROUND_TRUTH, HH_PARAM_NAMES};
use snpekit_core::simulators::{AutapseSpec, GlmSpec, GmSpec, HhSpec};
use snpekit_core::snpe::{AutapseModel, GlmModel, GmModel, HhModel, Model, SnpeConfig};
use snpekit_core::{BoxUniform, Distribution, GaussianMixture};

use crate::error::{CliError, Result};
use crate::presets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    #[serde(default)]
    pub observation: ObservationConfig,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Gm {
        spec: GmSpec,
        #[serde(default)]
        features: GmFeatureMode,
    },
    Glm {
        spec: GlmSpec,
    },
    Autapse {
        #[serde(default)]
        spec: AutapseSpec,
    },
    Hh {
        #[serde(default)]
        spec: HhSpec,
        #[serde(default)]
        features: HhFeatureSpec,
        /// Subsampling stride of the voltage/current sequence fed to a
        /// recurrent front end.
        gru_stride: Option<usize>,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Box<dyn Model> {
        match self {
            ModelConfig::Gm { spec, features } => Box::new(GmModel { spec: spec.clone(), mode: *features }),
            ModelConfig::Glm { spec } => Box::new(GlmModel { design: spec.design() }),
            ModelConfig::Autapse { spec } => Box::new(AutapseModel { spec: spec.clone() }),
            ModelConfig::Hh { spec, features, gru_stride } => {
                Box::new(HhModel { spec: spec.clone(), features: features.clone(), gru_stride: *gru_stride })
            }
        }
    }

    pub fn theta_dim(&self) -> usize {
        match self {
            ModelConfig::Gm { .. } => 1,
            ModelConfig::Glm { spec } => spec.dim,
            ModelConfig::Autapse { .. } => 2,
            ModelConfig::Hh { .. } => HH_PARAM_NAMES.len(),
        }
    }

    /// Map parameters as written in the config to the inference space
    /// (log-absolute values for the conductance model).
    pub fn to_inference_space(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            ModelConfig::Hh { .. } => to_log_abs(theta),
            _ => theta.to_vec(),
        }
    }

    pub fn default_theta(&self) -> Option<Vec<f64>> {
        match self {
            ModelConfig::Hh { .. } => Some(HH_GROUND_TRUTH.to_vec()),
            ModelConfig::Autapse { .. } => Some(vec![0.75, 1.0]),
            _ => None,
        }
    }

    pub fn parameter_names(&self) -> Vec<String> {
        match self {
            ModelConfig::Hh { .. } => HH_PARAM_NAMES.iter().map(|n| format!("log|{n}|")).collect(),
            ModelConfig::Autapse { .. } => vec!["J".into(), "tau".into()],
            ModelConfig::Gm { .. } => vec!["theta".into()],
            ModelConfig::Glm { .. } => (0..self.theta_dim()).map(|i| format!("beta_{i}")).collect(),
        }
    }

    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let wrap = |section: &str, r: snpekit_core::Result<()>| r.map_err(|e| (section.to_string(), e.to_string()));
        match self {
            ModelConfig::Gm { spec, .. } => wrap("model.spec", spec.validate()),
            ModelConfig::Glm { spec } => wrap("model.spec", spec.validate()),
            ModelConfig::Autapse { spec } => wrap("model.spec", spec.validate()),
            ModelConfig::Hh { spec, gru_stride, .. } => {
                wrap("model.spec", spec.validate())?;
                if *gru_stride == Some(0) {
                    return Err(("model".into(), "gru_stride must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorConfig {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// Independent Gaussians.
    Gaussian {
        mean: Vec<f64>,
        sd: Vec<f64>,
    },
    /// Zero-mean Gaussian penalising second differences of the parameter vector.
    Smoothness {
        dim: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        augmentation: SmoothnessAugmentation,
    },
    /// Box between `low·|θ*|` and `high·|θ*|` of the conductance-model ground
    /// truth, in log-absolute coordinates.
    HhBox {
        #[serde(default = "default_low")]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
}

fn default_sigma() -> f64 {
    2.0
}

fn default_low() -> f64 {
    0.5
}

fn default_high() -> f64 {
    1.5
}

impl PriorConfig {
    pub fn build(&self) -> snpekit_core::Result<Distribution> {
        Ok(match self {
            PriorConfig::Box { lower, upper } => Distribution::BoxUniform(BoxUniform::new(lower.clone(), upper.clone())?),
            PriorConfig::Gaussian { mean, sd } => Distribution::Mixture(GaussianMixture::diagonal(mean.clone(), sd)?),
            PriorConfig::Smoothness { dim, sigma, augmentation } => {
                Distribution::Mixture(glm_smoothness_prior(*dim, *sigma, *augmentation)?)
            }
            PriorConfig::HhBox { low, high } => {
                let abs: Vec<f64> = HH_GROUND_TRUTH.iter().map(|v| v.abs()).collect();
                let lower = abs.iter().map(|a| (low * a).ln()).collect();
                let upper = abs.iter().map(|a| (high * a).ln()).collect();
                Distribution::BoxUniform(BoxUniform::new(lower, upper)?)
            }
        })
    }

    fn validate(&self) -> std::result::Result<(), (String, String)> {
        let bad = |m: &str| Err(("prior".to_string(), m.to_string()));
        match self {
            PriorConfig::HhBox { low, high } if !(*low > 0.0 && high > low) => bad("low and high must satisfy 0 < low < high"),
            PriorConfig::Gaussian { sd, .. } if sd.iter().any(|s| !(*s > 0.0)) => bad("sd must be positive"),
            _ => self.build().map(|_| ()).map_err(|e| ("prior".to_string(), e.to_string())),
        }
    }
}

/// Where `x_o` comes from: a simulation at ground truth, explicit feature
/// values, or a recorded trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// Ground-truth parameters in natural units.
    pub theta: Option<Vec<f64>>,
    #[serde(default = "default_observation_seed")]
    pub seed: u64,
    pub features: Option<Vec<f64>>,
    /// Trace CSV (`time,<channel>,stimulus`), relative to the config file.
    pub trace: Option<PathBuf>,
}

fn default_observation_seed() -> u64 {
    1
}

impl Default for ObservationConfig {
    fn default() -> Self {
        ObservationConfig { theta: None, seed: default_observation_seed(), features: None, trace: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MethodConfig {
    Snpe(SnpeConfig),
    /// Single-Gaussian fit with analytic proposal correction.
    Cdelfi(SnpeConfig),
    SmcAbc(SmcConfig),
    RejectionAbc(RejectionConfig),
    /// Metropolis reference posterior; GLM only.
    Mcmc(McmcConfig),
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig::Snpe(SnpeConfig::default())
    }
}

impl MethodConfig {
    pub fn label(&self) -> &'static str {
        match self {
            MethodConfig::Snpe(_) => "snpe",
            MethodConfig::Cdelfi(_) => "cdelfi",
            MethodConfig::SmcAbc(_) => "smc-abc",
            MethodConfig::RejectionAbc(_) => "rejection-abc",
            MethodConfig::Mcmc(_) => "mcmc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RejectionConfig {
    pub eps: f64,
    pub simulations: usize,
    pub pilot: usize,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig { eps: 1.0, simulations: 10_000, pilot: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Number of prior draws when `theta` is absent.
    pub draws: usize,
    /// Simulate at this parameter (natural units) instead of prior draws.
    pub theta: Option<Vec<f64>>,
    pub traces: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { draws: 10, theta: None, traces: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// A parsed config together with its source text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    /// Read a config file, or a shipped preset when `spec` names one.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if !path.exists() {
            if let Some(text) = presets::get(spec) {
                return Self::parse(text, PathBuf::from("."));
            }
        }
        let source = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&source, base)
    }

    pub fn parse(source: &str, base_dir: PathBuf) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(source).map_err(|e| CliError::Config(e.to_string()))?;
        if let Err((section, msg)) = config.validate() {
            return Err(CliError::Config(match locate(source, &section, &msg) {
                Some(line) => format!("line {line}: [{section}] {msg}"),
                None => format!("[{section}] {msg}"),
            }));
        }
        Ok(LoadedConfig { config, source: source.to_string(), base_dir })
    }

    /// Wrap a config built in code; the recorded source is its TOML rendering.
    pub fn from_config(config: ExperimentConfig, base_dir: PathBuf) -> Result<Self> {
        let source = toml::to_string(&config).map_err(|e| CliError::Config(e.to_string()))?;
        Self::parse(&source, base_dir)
    }
}

impl ExperimentConfig {
    /// Cross-section checks run before any simulation.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        self.model.validate()?;
        self.prior.validate()?;
        let d = self.model.theta_dim();
        let prior_dim = self.prior.build().map(|p| p.dim()).unwrap_or(d);
        if prior_dim != d {
            return Err(("prior".into(), format!("prior has {prior_dim} dimensions, the model {d}")));
        }
        let obs = &self.observation;
        let sources = [obs.theta.is_some(), obs.features.is_some(), obs.trace.is_some()].iter().filter(|b| **b).count();
        if sources > 1 {
            return Err(("observation".into(), "set only one of theta, features and trace".into()));
        }
        if sources == 0 && self.model.default_theta().is_none() {
            return Err(("observation".into(), "theta, features or trace is required for this model".into()));
        }
        if let Some(t) = &obs.theta {
            if t.len() != d {
                return Err(("observation".into(), format!("theta has {} entries, the model {d}", t.len())));
            }
        }
        if obs.trace.is_some() && !matches!(self.model, ModelConfig::Hh { .. } | ModelConfig::Autapse { .. }) {
            return Err(("observation".into(), "trace import needs a trace-producing model".into()));
        }
        if let Some(t) = &self.simulate.theta {
            if t.len() != d {
                return Err(("simulate".into(), format!("theta has {} entries, the model {d}", t.len())));
            }
        }
        let method = |r: snpekit_core::Result<()>| r.map_err(|e| ("method".to_string(), e.to_string()));
        match &self.method {
            MethodConfig::Snpe(c) | MethodConfig::Cdelfi(c) => {
                method(c.validate())?;
                let wants_gru = c.gru.is_some();
                let has_stride = matches!(self.model, ModelConfig::Hh { gru_stride: Some(_), .. });
                if wants_gru != has_stride {
                    return Err(("method".into(), "gru needs model.gru_stride and vice versa".into()));
                }
            }
            MethodConfig::SmcAbc(c) => method(c.validate())?,
            MethodConfig::RejectionAbc(c) => {
                if !(c.eps > 0.0) || c.simulations == 0 {
                    return Err(("method".into(), "eps and simulations must be positive".into()));
                }
            }
            MethodConfig::Mcmc(c) => {
                if !matches!(self.model, ModelConfig::Glm { .. }) {
                    return Err(("method".into(), "mcmc reference is available for the GLM only".into()));
                }
                if !matches!(self.prior, PriorConfig::Gaussian { .. } | PriorConfig::Smoothness { .. }) {
                    return Err(("prior".into(), "mcmc reference needs a Gaussian prior".into()));
                }
                if c.chains < 2 || c.samples < 4 {
                    return Err(("method".into(), "chains must be at least 2 and samples at least 4".into()));
                }
            }
        }
        Ok(())
    }
}

/// 1-based line of the key in `section` named in `msg`, else of the section
/// header.
fn locate(source: &str, section: &str, msg: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    let words: Vec<&str> = msg.split(|c: char| !(c.is_alphanumeric() || c == '_')).filter(|w| !w.is_empty()).collect();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((key, _)) = line.split_once('=') {
                if words.contains(&key.trim()) {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for name in presets::NAMES {
            let loaded = LoadedConfig::load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(loaded.config.name, *name);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = presets::get("gm-common").unwrap().replace("[prior]", "[prior]\nbogus = 1");
        assert!(matches!(LoadedConfig::parse(&text, ".".into()), Err(CliError::Config(_))));
    }

    #[test]
    fn validation_errors_name_the_line() {
        let text = presets::get("hh12").unwrap().replace("dt = 0.025", "dt = -0.025");
        let line = text.lines().position(|l| l.trim() == "dt = -0.025").unwrap() + 1;
        match LoadedConfig::parse(&text, ".".into()) {
            Err(CliError::Config(msg)) => assert!(msg.starts_with(&format!("line {line}:")), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
