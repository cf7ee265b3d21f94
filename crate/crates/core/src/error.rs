use thiserror::Error;

/// Errors raised by the inference toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),

    #[error("network output is not finite")]
    NonFiniteOutput,

    #[error("resulting precision matrix is not positive definite")]
    NonPositivePrecision,

    #[error("proposal density is zero at a point with positive prior density")]
    DegenerateProposal,

    #[error("all importance weights in the round are zero")]
    AllZeroWeights,

    #[error("guard rejected {0} consecutive proposals")]
    ProposalStarvation(usize),

    #[error("no simulation was accepted")]
    NoAcceptances,

    #[error("particle collapse: effective sample size {0:.3} < 2")]
    ParticleCollapse(f64),

    #[error("chains did not converge: max R-hat {0:.4}")]
    NonConvergence(f64),

    #[error("second-difference operator is singular without augmentation")]
    SingularF,

    #[error("simulator failed: {0}")]
    Simulation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
