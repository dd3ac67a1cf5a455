use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quad::{peaked_nodes, std_normal_pdf};
use crate::error::{Error, Result};
use crate::linalg::{dot, matvec, norm};
use crate::models::attention::scores;
use crate::models::{alpha_coarea, softmax};
use crate::rng;

pub const CONJECTURE_LABEL: &str = "CONJECTURE (exploratory; the limit is unproven)";

/// Bounded continuous `f : R^{n×d} → R^d` (contexts flattened row-major).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextFn {
    Zero,
    /// `f(X)_c = tanh(Σ_i x_{i,c})`.
    TanhSum,
    /// `f(X)_c = cos(x_{1,c})`.
    CosFirst,
}

impl ContextFn {
    pub fn eval(&self, x: &[f64], d: usize) -> Vec<f64> {
        let n = x.len() / d;
        match self {
            ContextFn::Zero => vec![0.0; d],
            ContextFn::TanhSum => (0..d).map(|c| (0..n).map(|i| x[i * d + c]).sum::<f64>().tanh()).collect(),
            ContextFn::CosFirst => (0..d).map(|c| x[c].cos()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionGradRow {
    pub r: f64,
    /// `r ∇g_f(rA)`, row-major `d × d`.
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Frobenius distance to the conjectured limit.
    pub gap_to_limit: f64,
    /// Frobenius distance to the previous grid point.
    pub gap_to_previous: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExploreReport {
    pub label: String,
    pub d: usize,
    pub n_tokens: usize,
    pub a: Vec<f64>,
    pub n_samples: usize,
    /// `A` is singular: `A x_n` then vanishes on a whole subspace and the
    /// surface integral can diverge.
    pub a_singular: bool,
    /// The conjectured limit as a surface integral over the `Γ_ij(A)`.
    pub limit: Vec<f64>,
    pub limit_stderr: Vec<f64>,
    pub alpha_floor: f64,
    /// Surface weight skipped at points with `α_ij` below the floor, as a
    /// fraction of the total surface weight.
    pub skipped_mass: f64,
    pub skipped_samples: usize,
    pub rows: Vec<AttentionGradRow>,
    /// Consecutive differences along the grid are decreasing.
    pub cauchy_gaps_decreasing: bool,
}

/// Explores `r ∇g_f(rA)` for standard Gaussian tokens against the surface
/// integral over the sets `Γ_ij(A)` where tokens `i` and `j` tie for the
/// maximal score. For each ordered pair one non-query token `k ∈ {i, j}` is
/// written `x_k = s q̂ + y` with `q = A x_n`; conditioning on everything but
/// `s` turns the surface integral into a weighted expectation and the finite-`r`
/// gradient into a one-dimensional quadrature in `s`.
#[allow(clippy::too_many_arguments)]
pub fn attention_gradient_limit_explore(
    f: ContextFn,
    d: usize,
    n_tokens: usize,
    a: &[f64],
    r_grid: &[f64],
    n_samples: usize,
    alpha_floor: f64,
    seed: u64,
) -> Result<AttentionExploreReport> {
    if d == 0 || n_tokens == 0 || a.len() != d * d {
        return Err(Error::dim("A must be d x d with d, n_tokens >= 1"));
    }
    let an = norm(a);
    if !(an > 0.0) {
        return Err(Error::invalid("A must be nonzero"));
    }
    let a: Vec<f64> = a.iter().map(|v| v / an).collect();
    let n = n_tokens;
    let dd = d * d;
    let last = n - 1;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let term = |x: &[f64], i: usize, j: usize, scale: f64, acc: &mut [f64]| {
        let fx = f.eval(x, d);
        let c = scale * dot(&fx, &x[i * d..(i + 1) * d]);
        let xn = &x[last * d..];
        for p in 0..d {
            let diff = x[i * d + p] - x[j * d + p];
            for q in 0..d {
                acc[p * d + q] += c * diff * xn[q];
            }
        }
    };
    struct Sample {
        lim: Vec<f64>,
        lhs: Vec<Vec<f64>>,
        skipped: f64,
        total: f64,
        n_skipped: usize,
    }
    let samples: Vec<Sample> = (0..n_samples)
        .into_par_iter()
        .map(|t| {
            let mut rr = rng::substream(seed, t as u64);
            let x0 = rng::normal_vec(&mut rr, n * d);
            let q = matvec(&a, d, d, &x0[last * d..]);
            let qn = norm(&q);
            let mut out = Sample { lim: vec![0.0; dd], lhs: vec![vec![0.0; dd]; r_grid.len()], skipped: 0.0, total: 0.0, n_skipped: 0 };
            if qn < 1e-300 {
                out.n_skipped += 1;
                return out;
            }
            let qh: Vec<f64> = q.iter().map(|v| v / qn).collect();
            for &(i, j) in &pairs {
                let k = if i != last { i } else { j };
                let other = if k == i { j } else { i };
                let xk = &x0[k * d..(k + 1) * d];
                let sk = dot(xk, &qh);
                let y: Vec<f64> = xk.iter().zip(&qh).map(|(v, h)| v - sk * h).collect();
                let with_s = |s: f64| -> Vec<f64> {
                    let mut x = x0.clone();
                    for p in 0..d {
                        x[k * d + p] = s * qh[p] + y[p];
                    }
                    x
                };
                let s_star = dot(&q, &x0[other * d..(other + 1) * d]) / qn;
                // surface point: tokens i and j tie and lead every other token
                let xs = with_s(s_star);
                let z = scores(&a, &xs, d);
                let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if z[i] >= top - 1e-12 * top.abs().max(1.0) {
                    let w = std_normal_pdf(s_star) / qn;
                    out.total += w;
                    let alpha = alpha_coarea(&a, &xs, d, i, j).unwrap_or(0.0);
                    if alpha < alpha_floor {
                        out.skipped += w;
                        out.n_skipped += 1;
                    } else {
                        term(&xs, i, j, w, &mut out.lim);
                    }
                }
                for (ri, &r) in r_grid.iter().enumerate() {
                    let nodes = peaked_nodes(s_star, 40.0 / (r * qn).max(1e-300));
                    for (s, w) in nodes {
                        let x = with_s(s);
                        let ra: Vec<f64> = a.iter().map(|v| r * v).collect();
                        let p = softmax(&scores(&ra, &x, d));
                        term(&x, i, j, w * r * p[i] * p[j], &mut out.lhs[ri]);
                    }
                }
            }
            out
        })
        .collect();
    let col = |it: &dyn Fn(&Sample) -> &Vec<f64>, c: usize| -> Vec<f64> { samples.iter().map(|s| it(s)[c]).collect() };
    let (limit, limit_stderr): (Vec<f64>, Vec<f64>) = (0..dd).map(|c| super::mean_se(&col(&|s| &s.lim, c))).unzip();
    let total: f64 = samples.iter().map(|s| s.total).sum();
    let skipped: f64 = samples.iter().map(|s| s.skipped).sum();
    let mut rows: Vec<AttentionGradRow> = Vec::new();
    for ri in 0..r_grid.len() {
        let (estimate, stderr): (Vec<f64>, Vec<f64>) = (0..dd).map(|c| super::mean_se(&col(&|s| &s.lhs[ri], c))).unzip();
        let gap_to_limit = norm(&crate::linalg::sub(&estimate, &limit));
        let gap_to_previous = rows.last().map(|p| norm(&crate::linalg::sub(&estimate, &p.estimate)));
        rows.push(AttentionGradRow { r: r_grid[ri], estimate, stderr, gap_to_limit, gap_to_previous });
    }
    let prev: Vec<f64> = rows.iter().filter_map(|r| r.gap_to_previous).collect();
    Ok(AttentionExploreReport {
        label: CONJECTURE_LABEL.to_string(),
        d,
        n_tokens,
        a_singular: nalgebra::DMatrix::from_row_slice(d, d, &a).singular_values().min() < 1e-12,
        a,
        n_samples,
        limit,
        limit_stderr,
        alpha_floor,
        skipped_mass: if total > 0.0 { skipped / total } else { 0.0 },
        skipped_samples: samples.iter().map(|s| s.n_skipped).sum(),
        rows,
        cauchy_gaps_decreasing: prev.windows(2).all(|w| w[1] < w[0]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases_vanish() {
        let a = [1.0, 0.0, 0.0, 0.0];
        let rep = attention_gradient_limit_explore(ContextFn::TanhSum, 2, 1, &a, &[1.0, 10.0], 50, 1e-6, 1).unwrap();
        assert!(rep.limit.iter().chain(rep.rows.iter().flat_map(|r| r.estimate.iter())).all(|&v| v == 0.0));
        let rep = attention_gradient_limit_explore(ContextFn::Zero, 2, 3, &a, &[1.0, 10.0], 50, 1e-6, 1).unwrap();
        assert!(rep.limit.iter().chain(rep.rows.iter().flat_map(|r| r.estimate.iter())).all(|&v| v == 0.0));
        assert!(rep.label.starts_with("CONJECTURE"));
    }

    #[test]
    fn invertible_direction_converges() {
        let rep =
            attention_gradient_limit_explore(ContextFn::TanhSum, 2, 2, &[0.8, 0.3, -0.2, 0.5], &[10.0, 100.0, 1e3], 500, 1e-6, 2).unwrap();
        assert!(!rep.a_singular && rep.cauchy_gaps_decreasing);
        assert!(rep.rows[2].gap_to_limit < 1e-4);
        let rep = attention_gradient_limit_explore(ContextFn::TanhSum, 2, 2, &[1.0, 0.0, 0.0, 0.0], &[10.0], 10, 1e-6, 2).unwrap();
        assert!(rep.a_singular);
    }

    #[test]
    fn finite_r_matches_direct_gradient() {
        // r = 1: the conditioned quadrature equals plain Monte Carlo of ∇g_f(A)
        let a = [0.6, -0.3, 0.2, 0.7];
        let rep = attention_gradient_limit_explore(ContextFn::CosFirst, 2, 3, &a, &[1.0], 4000, 1e-6, 5).unwrap();
        let an = norm(&a);
        let ah: Vec<f64> = a.iter().map(|v| v / an).collect();
        let mut r = rng::seeded(99);
        let m = 200_000;
        let mut acc = vec![0.0; 4];
        let mut acc2 = vec![0.0; 4];
        for _ in 0..m {
            let x = rng::normal_vec(&mut r, 6);
            let p = softmax(&scores(&ah, &x, 2));
            let mut g = vec![0.0; 4];
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        let fx = ContextFn::CosFirst.eval(&x, 2);
                        let c = p[i] * p[j] * dot(&fx, &x[2 * i..2 * i + 2]);
                        for pp in 0..2 {
                            for qq in 0..2 {
                                g[pp * 2 + qq] += c * (x[2 * i + pp] - x[2 * j + pp]) * x[4 + qq];
                            }
                        }
                    }
                }
            }
            for c in 0..4 {
                acc[c] += g[c];
                acc2[c] += g[c] * g[c];
            }
        }
        for c in 0..4 {
            let mean = acc[c] / m as f64;
            let se = ((acc2[c] / m as f64 - mean * mean) / m as f64).sqrt();
            let tol = 4.0 * (se * se + rep.rows[0].stderr[c].powi(2)).sqrt();
            assert!((rep.rows[0].estimate[c] - mean).abs() < tol, "component {c}: {} vs {mean}", rep.rows[0].estimate[c]);
        }
    }
}
