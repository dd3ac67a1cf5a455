//! Pointwise losses, the empirical risk and its residual, and the truncation
//! profile `ξ`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, pairwise_sum};
use crate::models::dataset::is_one_hot;
use crate::models::softmax::softmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Square,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub d_out: usize,
}

impl LossSpec {
    pub fn square(d_out: usize) -> Self {
        Self { kind: LossKind::Square, d_out }
    }

    pub fn cross_entropy(d_out: usize) -> Self {
        Self { kind: LossKind::CrossEntropy, d_out }
    }

    /// Gradient Lipschitz constant in `z`.
    pub fn smoothness(&self) -> f64 {
        match self.kind {
            LossKind::Square => 1.0,
            LossKind::CrossEntropy => 2.0,
        }
    }

    fn check(&self, z: &[f64], y: &[f64]) -> Result<()> {
        if z.len() != self.d_out || y.len() != self.d_out {
            return Err(Error::dim(format!("loss expects length {} (got z: {}, y: {})", self.d_out, z.len(), y.len())));
        }
        if self.kind == LossKind::CrossEntropy && !is_one_hot(y) {
            return Err(Error::NotOneHot { index: 0 });
        }
        Ok(())
    }

    pub fn value(&self, z: &[f64], y: &[f64]) -> Result<f64> {
        self.check(z, y)?;
        Ok(self.value_unchecked(z, y))
    }

    pub fn grad(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check(z, y)?;
        let mut g = vec![0.0; z.len()];
        self.grad_into(z, y, &mut g);
        Ok(g)
    }

    pub(crate) fn value_unchecked(&self, z: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            LossKind::Square => 0.5 * dist_sq(z, y),
            LossKind::CrossEntropy => {
                let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
                let zy: f64 = z.iter().zip(y).map(|(a, b)| a * b).sum();
                (lse - zy).max(0.0)
            }
        }
    }

    pub(crate) fn grad_into(&self, z: &[f64], y: &[f64], out: &mut [f64]) {
        match self.kind {
            LossKind::Square => {
                for ((o, a), b) in out.iter_mut().zip(z).zip(y) {
                    *o = a - b;
                }
            }
            LossKind::CrossEntropy => {
                for ((o, s), b) in out.iter_mut().zip(softmax(z)).zip(y) {
                    *o = s - b;
                }
            }
        }
    }

    fn check_batch(&self, predictions: &[f64], labels: &[f64]) -> Result<usize> {
        if predictions.len() != labels.len() || predictions.len() % self.d_out != 0 || predictions.is_empty() {
            return Err(Error::dim(format!(
                "predictions ({}) and labels ({}) must be equal nonempty multiples of {}",
                predictions.len(),
                labels.len(),
                self.d_out
            )));
        }
        if self.kind == LossKind::CrossEntropy {
            if let Some(s) = labels.chunks(self.d_out).position(|y| !is_one_hot(y)) {
                return Err(Error::NotOneHot { index: s });
            }
        }
        Ok(predictions.len() / self.d_out)
    }

    /// `(1/N) Σ_s ℓ(z_s, y_s)` over row-major `N × d_out` arrays.
    pub fn risk(&self, predictions: &[f64], labels: &[f64]) -> Result<f64> {
        let n = self.check_batch(predictions, labels)?;
        let per: Vec<f64> =
            predictions.par_chunks(self.d_out).zip(labels.par_chunks(self.d_out)).map(|(z, y)| self.value_unchecked(z, y)).collect();
        Ok(pairwise_sum(&per) / n as f64)
    }

    /// Row `s` is `∇_z ℓ(z_s, y_s)`.
    pub fn risk_residual(&self, predictions: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
        self.check_batch(predictions, labels)?;
        let mut out = vec![0.0; predictions.len()];
        out.par_chunks_mut(self.d_out)
            .zip(predictions.par_chunks(self.d_out).zip(labels.par_chunks(self.d_out)))
            .for_each(|(o, (z, y))| self.grad_into(z, y, o));
        Ok(out)
    }
}

pub fn loss_value(spec: &LossSpec, z: &[f64], y: &[f64]) -> Result<f64> {
    spec.value(z, y)
}

pub fn loss_grad(spec: &LossSpec, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    spec.grad(z, y)
}

/// Smooth saturation of the risk at level `2α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub alpha: f64,
}

impl Truncation {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("truncation level must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn xi(&self, x: f64) -> f64 {
        let a = self.alpha;
        if x <= a {
            x
        } else if x >= 2.0 * a {
            2.0 * a
        } else {
            let c = 1.0 - (PI * (x - a) / a).cos();
            x + (x - a) * (2.0 * a - x) * c / (2.0 * a)
        }
    }

    pub fn xi_prime(&self, x: f64) -> f64 {
        let a = self.alpha;
        if x <= a {
            1.0
        } else if x >= 2.0 * a {
            0.0
        } else {
            let t = PI * (x - a) / a;
            let p = (x - a) * (2.0 * a - x);
            let dp = 3.0 * a - 2.0 * x;
            1.0 + (dp * (1.0 - t.cos()) + p * (PI / a) * t.sin()) / (2.0 * a)
        }
    }

    pub fn xi_double_prime(&self, x: f64) -> f64 {
        let a = self.alpha;
        if x <= a || x >= 2.0 * a {
            0.0
        } else {
            let k = PI / a;
            let t = k * (x - a);
            let p = (x - a) * (2.0 * a - x);
            let dp = 3.0 * a - 2.0 * x;
            (-2.0 * (1.0 - t.cos()) + 2.0 * dp * k * t.sin() + p * k * k * t.cos()) / (2.0 * a)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm, norm_sq};
    use crate::rng::{normal_vec, seeded};
    use rand::Rng;

    fn one_hot(k: usize, i: usize) -> Vec<f64> {
        let mut y = vec![0.0; k];
        y[i] = 1.0;
        y
    }

    #[test]
    fn examples() {
        let sq = LossSpec::square(2);
        let ce = LossSpec::cross_entropy(2);
        assert_eq!(sq.value(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((LossSpec::cross_entropy(5).value(&[0.0; 5], &one_hot(5, 2)).unwrap() - 5f64.ln()).abs() < 1e-15);
        let v = ce.value(&[5.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((v - (1.0 + (-5f64).exp()).ln()).abs() < 1e-15);
        assert!((v - 0.006715).abs() < 1e-6);
        assert_eq!(ce.grad(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), vec![-0.5, 0.5]);
        assert!(matches!(ce.value(&[0.0, 0.0], &[0.5, 0.5]), Err(Error::NotOneHot { .. })));
        assert!(matches!(ce.value(&[0.0, 0.0], &[1.0 + 1e-15, 0.0]), Err(Error::NotOneHot { .. })));
    }

    #[test]
    fn risk_reduces_to_loss() {
        let sq = LossSpec::square(3);
        let z = [0.3, -1.0, 2.0];
        let y = [1.0, 0.0, 0.5];
        assert_eq!(sq.risk(&z, &y).unwrap(), sq.value(&z, &y).unwrap());
        assert_eq!(sq.risk_residual(&z, &y).unwrap(), sq.grad(&z, &y).unwrap());
        assert_eq!(sq.risk(&z, &z).unwrap(), 0.0);
        let bad = LossSpec::cross_entropy(2).risk(&[0.0; 4], &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(bad, Err(Error::NotOneHot { index: 1 })));
    }

    #[test]
    fn grad_bound_convexity_and_smoothness() {
        let mut r = seeded(11);
        let k = 4;
        for spec in [LossSpec::square(k), LossSpec::cross_entropy(k)] {
            for _ in 0..20_000 {
                let scale = 3.0 * r.random::<f64>();
                let z1: Vec<f64> = normal_vec(&mut r, k).iter().map(|v| scale * v).collect();
                let z2 = normal_vec(&mut r, k);
                let y = match spec.kind {
                    LossKind::Square => normal_vec(&mut r, k),
                    LossKind::CrossEntropy => one_hot(k, r.random_range(0..k)),
                };
                let l = spec.value(&z1, &y).unwrap();
                let g1 = spec.grad(&z1, &y).unwrap();
                assert!(norm_sq(&g1) <= 2.0 * l + 1e-12);
                let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| 0.5 * (a + b)).collect();
                let lm = spec.value(&mid, &y).unwrap();
                assert!(lm <= 0.5 * (l + spec.value(&z2, &y).unwrap()) + 1e-12);
                let g2 = spec.grad(&z2, &y).unwrap();
                let dg: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
                assert!(norm(&dg) <= spec.smoothness() * dist_sq(&z1, &z2).sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn residual_norm_bound() {
        let mut r = seeded(12);
        let (n, k) = (30, 3);
        for _ in 0..50 {
            let z = normal_vec(&mut r, n * k);
            let y: Vec<f64> = (0..n).flat_map(|_| one_hot(k, r.random_range(0..k))).collect();
            let spec = LossSpec::cross_entropy(k);
            let res = spec.risk_residual(&z, &y).unwrap();
            assert!(norm_sq(&res) / n as f64 <= 2.0 * spec.risk(&z, &y).unwrap() + 1e-12);
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut r = seeded(13);
        let k = 3;
        let h = 1e-6;
        for spec in [LossSpec::square(k), LossSpec::cross_entropy(k)] {
            for _ in 0..100 {
                let z = normal_vec(&mut r, k);
                let y = match spec.kind {
                    LossKind::Square => normal_vec(&mut r, k),
                    LossKind::CrossEntropy => one_hot(k, r.random_range(0..k)),
                };
                let g = spec.grad(&z, &y).unwrap();
                for i in 0..k {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[i] += h;
                    zm[i] -= h;
                    let fd = (spec.value(&zp, &y).unwrap() - spec.value(&zm, &y).unwrap()) / (2.0 * h);
                    assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn truncation_branches() {
        let t = Truncation::new(2.0).unwrap();
        for x in [0.0, 0.5, 2.0] {
            assert_eq!((t.xi(x), t.xi_prime(x), t.xi_double_prime(x)), (x, 1.0, 0.0));
        }
        assert_eq!((t.xi(4.0), t.xi_prime(4.0)), (4.0, 0.0));
        assert_eq!(t.xi(10.0), 4.0);
        assert!((t.xi(3.0) - 13.0 * 2.0 / 8.0).abs() < 1e-14);
        assert!(Truncation::new(0.0).is_err());
    }

    #[test]
    fn truncation_derivative_bounds_and_monotonicity() {
        for alpha in [0.1, 1.0, 7.0] {
            let t = Truncation::new(alpha).unwrap();
            let n = 10_000;
            let mut max_p: f64 = 0.0;
            let mut max_pp: f64 = 0.0;
            for i in 1..n {
                let x = alpha + alpha * i as f64 / n as f64;
                assert!(t.xi_prime(x) > 0.0);
                max_p = max_p.max(t.xi_prime(x));
                max_pp = max_pp.max(t.xi_double_prime(x).abs());
            }
            assert!(max_p <= 1.5 + 1e-12, "{max_p}");
            assert!(max_pp <= 4.0 / alpha + 1e-9, "{max_pp}");
        }
    }

    #[test]
    fn truncation_derivatives_match_finite_differences() {
        let t = Truncation::new(1.3).unwrap();
        let h = 1e-5;
        for i in 1..200 {
            let x = 1.3 + 1.3 * i as f64 / 200.0;
            let fd1 = (t.xi(x + h) - t.xi(x - h)) / (2.0 * h);
            let fd2 = (t.xi_prime(x + h) - t.xi_prime(x - h)) / (2.0 * h);
            assert!((fd1 - t.xi_prime(x)).abs() < 1e-8);
            assert!((fd2 - t.xi_double_prime(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn truncation_gluing_at_knots() {
        let a = 0.8;
        let t = Truncation::new(a).unwrap();
        let h = 1e-7;
        for knot in [a, 2.0 * a] {
            let right = (t.xi(knot + h) - t.xi(knot)) / h;
            let left = (t.xi(knot) - t.xi(knot - h)) / h;
            assert!((right - left).abs() < 1e-5);
            assert!((t.xi_prime(knot + 1e-12) - t.xi_prime(knot - 1e-12)).abs() < 1e-9);
        }
        // second derivative is continuous at α only
        assert!(t.xi_double_prime(a + 1e-9).abs() < 1e-6);
        assert!((t.xi_double_prime(2.0 * a - 1e-9) + 2.0 / a).abs() < 1e-6);
    }
}
