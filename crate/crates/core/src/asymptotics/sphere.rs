use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SphereKind {
    Uniform,
    /// Jittered angles in dimension 2 (uniform draws otherwise), followed by
    /// the `2·dim` signed coordinate axes.
    StratifiedPlusAxes,
}

/// Directions on the unit sphere of `R^dim`; `d×d` matrices are flattened
/// row-major, so the norm is the Frobenius norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereSampler {
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    pub kind: SphereKind,
}

impl SphereSampler {
    pub fn new(dim: usize, count: usize, seed: u64, kind: SphereKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("sphere dimension must be >= 1"));
        }
        Ok(Self { dim, count, seed, kind })
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut out: Vec<Vec<f64>> = match (self.kind, d) {
            (SphereKind::StratifiedPlusAxes, 2) => {
                let mut r = rng::seeded(self.seed);
                (0..self.count)
                    .map(|k| {
                        let a = std::f64::consts::TAU * (k as f64 + rand::Rng::random::<f64>(&mut r)) / self.count as f64;
                        vec![a.cos(), a.sin()]
                    })
                    .collect()
            }
            _ => (0..self.count).map(|k| rng::unit_vec(&mut rng::substream(self.seed, k as u64), d)).collect(),
        };
        if self.kind == SphereKind::StratifiedPlusAxes {
            for k in 0..d {
                for s in [1.0, -1.0] {
                    let mut e = vec![0.0; d];
                    e[k] = s;
                    out.push(e);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_counts() {
        for kind in [SphereKind::Uniform, SphereKind::StratifiedPlusAxes] {
            for dim in [1, 2, 4] {
                let s = SphereSampler::new(dim, 100, 3, kind).unwrap();
                let pts = s.points();
                let extra = if kind == SphereKind::Uniform { 0 } else { 2 * dim };
                assert_eq!(pts.len(), 100 + extra);
                assert!(pts.iter().all(|p| (crate::linalg::norm(p) - 1.0).abs() < 1e-12));
            }
        }
        assert_eq!(
            SphereSampler::new(3, 5, 1, SphereKind::Uniform).unwrap().points(),
            SphereSampler::new(3, 5, 1, SphereKind::Uniform).unwrap().points()
        );
    }
}
