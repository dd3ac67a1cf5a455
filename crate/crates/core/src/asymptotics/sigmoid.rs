use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quad::{peaked_nodes, std_normal_pdf};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, proj_perp};
use crate::models::sigmoid;
use crate::rng::{self, SimRng};

const CHUNK: usize = 4096;

/// Bounded continuous test functions `R^d → R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarFn {
    One,
    /// `tanh(x₁)`.
    TanhFirst,
    /// `cos(x₁)`.
    CosFirst,
    /// `exp(−|x|²/2)`.
    Bump,
    /// `sin(x₁ + … + x_d)`.
    SinSum,
}

impl ScalarFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarFn::One => 1.0,
            ScalarFn::TanhFirst => x[0].tanh(),
            ScalarFn::CosFirst => x[0].cos(),
            ScalarFn::Bump => (-0.5 * dot(x, x)).exp(),
            ScalarFn::SinSum => x.iter().sum::<f64>().sin(),
        }
    }
}

/// Input densities `ρ_x`. Gaussian and Student-t are written as scale
/// mixtures `x = c·z` with `z` standard normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "density", rename_all = "kebab-case")]
pub enum XDensity {
    Gaussian {
        d: usize,
    },
    /// Multivariate t with `nu` degrees of freedom; decays like `|x|^{−(nu+d)}`.
    StudentT {
        d: usize,
        nu: f64,
    },
    /// Resampled points with no declared density.
    Empirical {
        d: usize,
        samples: Vec<f64>,
    },
}

impl XDensity {
    pub fn d(&self) -> usize {
        match self {
            XDensity::Gaussian { d } | XDensity::StudentT { d, .. } | XDensity::Empirical { d, .. } => *d,
        }
    }

    /// `p` with `ρ_x(x) ≤ C(1+|x|)^{−p}`; infinite for the Gaussian.
    pub fn decay_exponent(&self) -> Option<f64> {
        match self {
            XDensity::Gaussian { .. } => Some(f64::INFINITY),
            XDensity::StudentT { d, nu } => Some(nu + *d as f64),
            XDensity::Empirical { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            XDensity::Gaussian { d } if *d >= 1 => Ok(()),
            XDensity::StudentT { d, nu } if *d >= 1 && *nu > 1.0 => Ok(()),
            XDensity::Empirical { d, samples } if *d >= 1 && !samples.is_empty() && samples.len() % d == 0 => Ok(()),
            _ => Err(Error::invalid(format!("invalid density {self:?}"))),
        }
    }

    fn scale(&self, r: &mut SimRng) -> f64 {
        match self {
            XDensity::StudentT { nu, .. } => {
                let v: f64 = ChiSquared::new(*nu).expect("nu > 0").sample(r);
                (nu / v).sqrt()
            }
            _ => 1.0,
        }
    }

    pub fn sample(&self, r: &mut SimRng) -> Vec<f64> {
        match self {
            XDensity::Empirical { d, samples } => {
                let k = r.random_range(0..samples.len() / d);
                samples[k * d..(k + 1) * d].to_vec()
            }
            _ => {
                let c = self.scale(r);
                rng::normal_vec(r, self.d()).into_iter().map(|z| c * z).collect()
            }
        }
    }
}

fn draw<T: Send>(n: usize, seed: u64, f: impl Fn(&mut SimRng) -> T + Sync) -> Vec<T> {
    (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::substream(seed, c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| f(&mut r)).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceRow {
    pub r: f64,
    /// `E[f(x) σ(r⟨θ,x⟩)]`.
    pub estimate: f64,
    pub stderr: f64,
    /// Paired difference against the half-space estimate.
    pub gap: f64,
    pub gap_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceTable {
    pub f: ScalarFn,
    pub theta: Vec<f64>,
    pub n_samples: usize,
    /// `E[f(x) 1{⟨θ,x⟩ ≥ 0}]`.
    pub limit: f64,
    pub limit_stderr: f64,
    /// `½ E[f]` on the same samples.
    pub half_mean_f: f64,
    pub rows: Vec<HalfspaceRow>,
}

impl HalfspaceTable {
    /// Gap at the largest `r` within `k` standard errors of zero.
    pub fn last_gap_within(&self, k: f64) -> bool {
        self.rows.last().is_some_and(|row| row.gap.abs() <= k * row.gap_stderr)
    }
}

/// Monte-Carlo estimates of `g_f(rθ) = E[f(x) σ(r⟨θ,x⟩)]` on a grid of `r`
/// against the half-space limit, on common samples.
pub fn sigmoid_halfspace_check(
    f: ScalarFn,
    density: &XDensity,
    theta: &[f64],
    r_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<HalfspaceTable> {
    density.validate()?;
    if theta.len() != density.d() || (norm(theta) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("theta must be a unit vector of the input dimension"));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let pairs = draw(n, seed, |r| {
        let x = density.sample(r);
        (f.eval(&x), dot(theta, &x))
    });
    let lim: Vec<f64> = pairs.iter().map(|&(fx, t)| if t >= 0.0 { fx } else { 0.0 }).collect();
    let (limit, limit_stderr) = super::mean_se(&lim);
    let fs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let half_mean_f = 0.5 * crate::linalg::pairwise_sum(&fs) / n as f64;
    let rows = r_grid
        .iter()
        .map(|&r| {
            let vals: Vec<f64> = pairs.par_iter().map(|&(fx, t)| fx * sigmoid(r * t)).collect();
            let diffs: Vec<f64> = vals.iter().zip(&lim).map(|(a, b)| a - b).collect();
            let (estimate, stderr) = super::mean_se(&vals);
            let (gap, gap_stderr) = super::mean_se(&diffs);
            HalfspaceRow { r, estimate, stderr, gap, gap_stderr }
        })
        .collect();
    Ok(HalfspaceTable { f, theta: theta.to_vec(), n_samples: n, limit, limit_stderr, half_mean_f, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub r: f64,
    /// `r ∇g_f(rθ) = r E[f(x) σ'(r⟨θ,x⟩) x]`.
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `|estimate − limit|`.
    pub gap: f64,
    /// Standard error of the paired difference, combined over components.
    pub gap_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientTable {
    pub f: ScalarFn,
    pub theta: Vec<f64>,
    pub n_samples: usize,
    /// `∫_{⟨θ,x⟩=0} f(x) ρ_x(x) x dH^{d−1}`.
    pub limit: Vec<f64>,
    pub limit_stderr: Vec<f64>,
    pub rows: Vec<GradientRow>,
}

fn sigmoid_prime(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `r ∇g_f(rθ)` against the hyperplane integral. Writing `x = c(sθ + y)` with
/// `y ⊥ θ`, both sides are conditioned on `(c, y)`: the surface integral
/// becomes `φ(0) E[f(cy) y]` and the finite-`r` side is integrated over `s`
/// by quadrature, so neither estimator degrades as `r` grows.
pub fn sigmoid_gradient_limit_check(
    f: ScalarFn,
    density: &XDensity,
    theta: &[f64],
    r_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<GradientTable> {
    density.validate()?;
    let Some(p) = density.decay_exponent() else {
        return Err(Error::Precondition("the density has no declared decay exponent".into()));
    };
    let d = density.d();
    if p <= d as f64 {
        return Err(Error::Precondition(format!("decay exponent {p} must exceed the dimension {d}")));
    }
    if theta.len() != d || (norm(theta) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("theta must be a unit vector of the input dimension"));
    }
    let cy = draw(n, seed, |r| {
        let c = density.scale(r);
        let y = proj_perp(&rng::normal_vec(r, d), theta);
        (c, y)
    });
    let point = |c: f64, s: f64, y: &[f64]| -> Vec<f64> { theta.iter().zip(y).map(|(t, yy)| c * (s * t + yy)).collect() };
    let phi0 = std_normal_pdf(0.0);
    let lim_samples: Vec<Vec<f64>> = cy
        .par_iter()
        .map(|(c, y)| {
            let x = point(*c, 0.0, y);
            let fx = f.eval(&x);
            y.iter().map(|v| phi0 * fx * v).collect()
        })
        .collect();
    let col = |rows: &[Vec<f64>], k: usize| -> Vec<f64> { rows.iter().map(|v| v[k]).collect() };
    let (limit, limit_stderr): (Vec<f64>, Vec<f64>) = (0..d).map(|k| super::mean_se(&col(&lim_samples, k))).unzip();
    let rows = r_grid
        .iter()
        .map(|&r| {
            let est: Vec<Vec<f64>> = cy
                .par_iter()
                .map(|(c, y)| {
                    let nodes = peaked_nodes(0.0, 40.0 / (r * c).max(1e-300));
                    let mut acc = vec![0.0; d];
                    for (s, w) in nodes {
                        let x = point(*c, s, y);
                        let k = w * r * sigmoid_prime(r * c * s) * f.eval(&x);
                        crate::linalg::axpy(k, &x, &mut acc);
                    }
                    acc
                })
                .collect();
            let (estimate, stderr): (Vec<f64>, Vec<f64>) = (0..d).map(|k| super::mean_se(&col(&est, k))).unzip();
            let diffs: Vec<Vec<f64>> = est.iter().zip(&lim_samples).map(|(a, b)| crate::linalg::sub(a, b)).collect();
            let dse: Vec<f64> = (0..d).map(|k| super::mean_se(&col(&diffs, k)).1).collect();
            let gap = norm(&crate::linalg::sub(&estimate, &limit));
            GradientRow { r, estimate, stderr, gap, gap_stderr: norm(&dse) }
        })
        .collect();
    Ok(GradientTable { f, theta: theta.to_vec(), n_samples: n, limit, limit_stderr, rows })
}
