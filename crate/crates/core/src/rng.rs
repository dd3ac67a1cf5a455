//! Seeded random number generation.
//!
//! Every stochastic routine takes an explicit 64-bit seed and draws from a
//! ChaCha8 stream so that results are reproducible across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a sub-task (trial index, direction id, ...).
pub fn substream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform direction on the unit sphere of R^n via a normalised Gaussian.
pub fn unit_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, n);
        let norm = crate::linalg::norm(&v);
        if norm > 1e-300 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
