use super::{Ensemble, Particle};
use crate::error::{Error, Result};
use crate::linalg::{norm_sq, pairwise_sum};

/// `ψ₂` norm of a unit-norm point mass, `1/√ln 2`.
pub const PSI2_POINT_MASS_UNIT: f64 = 1.201_122_408_786_449_8;

/// `m₂(μ) = (1/m) Σ |u_i|²`.
pub fn second_moment(ens: &Ensemble) -> f64 {
    let sq: Vec<f64> = ens.rows().map(norm_sq).collect();
    pairwise_sum(&sq) / ens.m() as f64
}

/// Log of `(1/m) Σ exp(|u_i|²/c²)`, computed with a max shift.
fn log_mean_exp(sq_norms: &[f64], max_sq: f64, c: f64) -> f64 {
    let inv = 1.0 / (c * c);
    let shift = max_sq * inv;
    let terms: Vec<f64> = sq_norms.iter().map(|s| (s * inv - shift).exp()).collect();
    shift + (pairwise_sum(&terms) / sq_norms.len() as f64).ln()
}

/// Measure-level sub-Gaussian norm
/// `inf { c > 0 : (1/m) Σ exp(|u_i|²/c²) ≤ 2 }`, found by bisection to
/// relative precision `tol`.
///
/// Bracket: at `c = max|u|/√ln(2m)` the largest term alone makes the mean
/// at least 2, and at `c = max|u|/√ln 2` every term is at most 2.
pub fn psi2_norm(ens: &Ensemble, tol: f64) -> f64 {
    assert!(tol > 0.0, "psi2_norm tolerance must be positive");
    let sq: Vec<f64> = ens.rows().map(norm_sq).collect();
    let max_sq = sq.iter().cloned().fold(0.0, f64::max);
    if max_sq == 0.0 {
        return 0.0;
    }
    let ln2 = std::f64::consts::LN_2;
    let m = sq.len() as f64;
    let feasible = |c: f64| log_mean_exp(&sq, max_sq, c) <= ln2;
    let max_norm = max_sq.sqrt();
    let mut lo = max_norm / (2.0 * m).ln().sqrt();
    let mut hi = max_norm / ln2.sqrt();
    while !feasible(hi) {
        hi *= 2.0;
    }
    if feasible(lo) {
        // only possible in the m = 1 boundary case where lo == hi
        return lo;
    }
    while (hi - lo) > tol * hi {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Image measure `T_# μ`: applies `map` to every particle, keeping order.
pub fn pushforward<F>(ens: &Ensemble, map: F) -> Result<Ensemble>
where
    F: Fn(&Particle) -> Particle,
{
    let mut out = Vec::with_capacity(ens.m());
    let mut d_w = None;
    let mut d_theta = None;
    for (i, p) in ens.particles().enumerate() {
        let q = map(&p);
        if !q.is_finite() {
            return Err(Error::NonFinite { step: i, what: "pushforward produced a non-finite particle".into() });
        }
        match (d_w, d_theta) {
            (None, None) => {
                d_w = Some(q.w.len());
                d_theta = Some(q.theta.len());
            }
            (Some(a), Some(b)) if a != q.w.len() || b != q.theta.len() => {
                return Err(Error::dim(format!("map output dimension changed at particle {i}")));
            }
            _ => {}
        }
        out.push(q);
    }
    Ensemble::from_particles(d_w.unwrap_or(0), d_theta.unwrap_or(0), &out)
}
