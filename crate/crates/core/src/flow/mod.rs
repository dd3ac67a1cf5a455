//! The particle gradient flow of `F_m`, i.e. the Wasserstein gradient flow
//! of the lifted risk restricted to empirical measures.

mod field;
mod integrate;
pub mod persist;
mod stability;

pub use field::{energy, first_variation, g_mu, mean_sq_velocity, velocity, Residual};
pub use integrate::{run_flow, FlowConfig, Integrator, Trajectory, DIVERGENCE_COORD, DIVERGENCE_ENERGY};
pub use stability::{stability_experiment, StabilityReport, StabilityRow};
