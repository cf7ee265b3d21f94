//! Simulators mapping `(θ, seed)` to raw output.

mod autapse;
mod glm;
mod gm;
pub mod hh;
mod trace;

pub use autapse::{simulate_autapse, AutapseOutput, AutapseSpec};
pub use glm::{logistic, simulate_glm, GlmDesign, GlmSpec};
pub use gm::{simulate_gm, GmSpec, GmVariant};
pub use hh::{simulate_hh, HhOutput, HhSpec, Stimulus};
pub use trace::Trace;
