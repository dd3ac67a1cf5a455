//! Empirical measures on `Ω = R^{d_w} × R^{d_θ}`.

mod ensemble;
mod init;
pub mod io;
mod moments;
mod w2;

pub use ensemble::{Ensemble, Particle};
pub use init::{sample_ensemble, BlockKind, BlockSpec, InitLayout, InitSpec};
pub use moments::{psi2_norm, pushforward, second_moment, PSI2_POINT_MASS_UNIT};
pub use w2::{assignment, w2_brute_force, w2_exact, w2_selftest, w2_sliced, W2SelfTest, BRUTE_FORCE_CAP, EXACT_W2_CAP};
