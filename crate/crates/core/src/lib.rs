//! Numerical laboratory for mean-field training dynamics of wide shallow
//! models `(1/m) Σ φ(θ_i) w_i`.
//!
//! The crate is organised around empirical measures on the parameter space
//! `Ω = R^{d_w} × R^{d_θ}`:
//!
//! * [`measure`]: particles, ensembles, samplers, moments, the measure-level
//!   sub-Gaussian norm and Wasserstein-2 distances.
//! * [`models`]: two-layer sigmoid-type networks and softmax attention heads,
//!   with their differentials and the hardmax limit.
//! * [`losses`]: square and cross-entropy risks and the C¹ truncation `ξ`.
//! * [`flow`]: the particle gradient flow (the empirical Wasserstein flow of
//!   the lifted risk) and the discretisation-stability experiment.
//! * [`escape`]: the reduced ODE of escaping active sets and constructions of
//!   escape / stable sets in the scalar and vector cases.
//! * [`asymptotics`]: large-parameter limits (softmax → hardmax, sigmoid →
//!   half-space) checked by Monte Carlo.

pub mod asymptotics;
pub mod error;
pub mod escape;
pub mod flow;
pub mod linalg;
pub mod losses;
pub mod measure;
pub mod models;
pub mod rng;

pub use error::{Error, Result};
