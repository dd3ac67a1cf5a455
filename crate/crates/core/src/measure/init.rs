use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Ensemble;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    Gaussian,
    UniformBall,
    PointMass,
}

/// Distribution of one coordinate block: `location + scale · Z` with `Z`
/// standard normal, uniform on the unit ball, or zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    /// Empty means the origin.
    #[serde(default)]
    pub location: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl BlockSpec {
    pub fn gaussian(scale: f64) -> Self {
        Self { kind: BlockKind::Gaussian, location: Vec::new(), scale }
    }

    pub fn uniform_ball(scale: f64) -> Self {
        Self { kind: BlockKind::UniformBall, location: Vec::new(), scale }
    }

    pub fn point_mass(location: Vec<f64>) -> Self {
        Self { kind: BlockKind::PointMass, location, scale: 0.0 }
    }

    fn validate(&self, dim: usize, what: &str) -> Result<()> {
        if !self.location.is_empty() && self.location.len() != dim {
            return Err(Error::dim(format!("{what} location has length {}, expected {dim}", self.location.len())));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid(format!("{what} scale must be finite and >= 0")));
        }
        Ok(())
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>, dim: usize) {
        let offset: Vec<f64> = match self.kind {
            BlockKind::PointMass => vec![0.0; dim],
            BlockKind::Gaussian => rng::normal_vec(rng, dim),
            BlockKind::UniformBall => {
                if dim == 0 {
                    Vec::new()
                } else {
                    let dir = rng::unit_vec(rng, dim);
                    let radius = rng.random::<f64>().powf(1.0 / dim as f64);
                    dir.into_iter().map(|x| x * radius).collect()
                }
            }
        };
        for (k, z) in offset.into_iter().enumerate() {
            let loc = self.location.get(k).copied().unwrap_or(0.0);
            out.push(loc + self.scale * z);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "kebab-case")]
pub enum InitLayout {
    /// One block over the full vector `u = (w, θ)`.
    Joint(BlockSpec),
    /// Independent blocks for `w` and `θ`.
    Product { w: BlockSpec, theta: BlockSpec },
}

/// Initial distribution `μ̄₀` together with its seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub d_w: usize,
    pub d_theta: usize,
    pub layout: InitLayout,
    pub seed: u64,
}

impl InitSpec {
    pub fn gaussian(d_w: usize, d_theta: usize, scale: f64, seed: u64) -> Self {
        Self { d_w, d_theta, layout: InitLayout::Joint(BlockSpec::gaussian(scale)), seed }
    }

    pub fn point_mass(d_w: usize, d_theta: usize, location: Vec<f64>) -> Self {
        Self { d_w, d_theta, layout: InitLayout::Joint(BlockSpec::point_mass(location)), seed: 0 }
    }

    pub fn product(d_w: usize, d_theta: usize, w: BlockSpec, theta: BlockSpec, seed: u64) -> Self {
        Self { d_w, d_theta, layout: InitLayout::Product { w, theta }, seed }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_w + self.d_theta == 0 {
            return Err(Error::dim("d_w + d_theta must be positive"));
        }
        match &self.layout {
            InitLayout::Joint(b) => b.validate(self.d_w + self.d_theta, "joint"),
            InitLayout::Product { w, theta } => {
                w.validate(self.d_w, "w")?;
                theta.validate(self.d_theta, "theta")
            }
        }
    }
}

/// Draws `m` i.i.d. particles from `spec`; identical `(spec, m)` give
/// bitwise-identical ensembles.
pub fn sample_ensemble(spec: &InitSpec, m: usize) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::invalid("m must be >= 1"));
    }
    spec.validate()?;
    let dim = spec.d_w + spec.d_theta;
    let mut rng = rng::seeded(spec.seed);
    let mut data = Vec::with_capacity(m * dim);
    for _ in 0..m {
        match &spec.layout {
            InitLayout::Joint(b) => b.sample_into(&mut rng, &mut data, dim),
            InitLayout::Product { w, theta } => {
                w.sample_into(&mut rng, &mut data, spec.d_w);
                theta.sample_into(&mut rng, &mut data, spec.d_theta);
            }
        }
    }
    Ensemble::from_flat(spec.d_w, spec.d_theta, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::second_moment;

    #[test]
    fn point_mass_at_origin() {
        let e = sample_ensemble(&InitSpec::point_mass(2, 3, vec![]), 3).unwrap();
        assert_eq!(e.m(), 3);
        assert!(e.as_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_scale_gaussian_is_location() {
        let loc = vec![1.0, -2.0, 0.5];
        let spec = InitSpec {
            d_w: 1,
            d_theta: 2,
            layout: InitLayout::Joint(BlockSpec { kind: BlockKind::Gaussian, location: loc.clone(), scale: 0.0 }),
            seed: 9,
        };
        let e = sample_ensemble(&spec, 5).unwrap();
        for r in e.rows() {
            assert_eq!(r, &loc[..]);
        }
    }

    #[test]
    fn standard_gaussian_second_moment() {
        // E|u|² = d_w + d_θ for a standard normal vector.
        let e = sample_ensemble(&InitSpec::gaussian(2, 3, 1.0, 1234), 10_000).unwrap();
        let m2 = second_moment(&e);
        assert!((m2 - 5.0).abs() / 5.0 < 0.05, "m2 = {m2}");
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = InitSpec::product(2, 2, BlockSpec::gaussian(1.0), BlockSpec::uniform_ball(2.0), 77);
        let a = sample_ensemble(&spec, 50).unwrap();
        let b = sample_ensemble(&spec, 50).unwrap();
        assert_eq!(a.as_flat(), b.as_flat());
        let c = sample_ensemble(&spec.clone().with_seed(78), 50).unwrap();
        assert_ne!(a.as_flat(), c.as_flat());
    }

    #[test]
    fn uniform_ball_stays_in_ball() {
        let spec = InitSpec { d_w: 1, d_theta: 2, layout: InitLayout::Joint(BlockSpec::uniform_ball(0.5)), seed: 3 };
        let e = sample_ensemble(&spec, 500).unwrap();
        assert!(e.rows().all(|r| crate::linalg::norm(r) <= 0.5 + 1e-12));
    }

    #[test]
    fn location_dimension_mismatch() {
        let spec = InitSpec::point_mass(1, 1, vec![1.0, 2.0, 3.0]);
        assert!(matches!(sample_ensemble(&spec, 2), Err(Error::Dimension(_))));
    }
}
