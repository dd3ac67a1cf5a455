//! Monte-Carlo helpers for sublevel sets `{f ≤ 0}` and their boundaries.

use rand::Rng;
use rayon::prelude::*;

use crate::linalg::norm;
use crate::rng::{self, SimRng};

/// Uniform point in the ball of radius `radius` in `R^d`.
pub fn ball_point(r: &mut SimRng, d: usize, radius: f64) -> Vec<f64> {
    let dir = rng::unit_vec(r, d);
    let rad = radius * r.random::<f64>().powf(1.0 / d as f64);
    dir.into_iter().map(|x| rad * x).collect()
}

/// Candidate points mixing a uniform ball and a Gaussian cloud, from which
/// those with `f ≤ 0` are kept.
pub fn interior_points<F>(f: &F, d: usize, radius: f64, n: usize, seed: u64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .filter_map(|k| {
            let mut r = rng::substream(seed, k as u64);
            let p = if k % 2 == 0 {
                ball_point(&mut r, d, radius)
            } else {
                rng::normal_vec(&mut r, d).into_iter().map(|x| x * radius / 3.0).collect()
            };
            (f(&p) <= 0.0).then_some(p)
        })
        .collect()
}

/// First crossing of `f = 0` along `p + s·dir`, `s ∈ (0, s_max]`, starting
/// from `f(p) ≤ 0`; located by marching and refined by bisection.
pub fn ray_crossing<F>(f: &F, p: &[f64], dir: &[f64], s_max: f64) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let at = |s: f64| -> Vec<f64> { p.iter().zip(dir).map(|(a, b)| a + s * b).collect() };
    let mut lo = 0.0;
    let mut s = 1e-3 * s_max.min(1.0);
    while s <= s_max {
        if f(&at(s)) > 0.0 {
            let mut hi = s;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if f(&at(mid)) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= 1e-14 * hi.max(1.0) {
                    break;
                }
            }
            return Some(at(0.5 * (lo + hi)));
        }
        lo = s;
        s = if s < 0.05 { s * 1.5 } else { s + 0.05 * s.max(1.0).min(s_max / 50.0) };
    }
    None
}

/// Up to `n` boundary points of `{f ≤ 0}` reached along random rays from
/// the interior sample. Point `k` uses substream `k` of `seed`.
pub fn boundary_points<F>(f: &F, interior: &[Vec<f64>], n: usize, s_max: f64, seed: u64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if interior.is_empty() {
        return Vec::new();
    }
    let d = interior[0].len();
    (0..n)
        .into_par_iter()
        .filter_map(|k| {
            let mut r = rng::substream(seed, k as u64);
            let p = &interior[r.random_range(0..interior.len())];
            let dir = rng::unit_vec(&mut r, d);
            ray_crossing(f, p, &dir, s_max)
        })
        .collect()
}

/// Whether `{f = 0}` meets the sphere of radius `radius` on the sampled
/// directions (evidence of an unbounded level set).
pub fn level_meets_sphere<F>(f: &F, d: usize, radius: f64, n_dirs: usize, seed: u64) -> bool
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let signs: Vec<bool> = (0..n_dirs)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::substream(seed, k as u64);
            let p: Vec<f64> = rng::unit_vec(&mut r, d).into_iter().map(|x| radius * x).collect();
            f(&p) <= 0.0
        })
        .collect();
    signs.iter().any(|&s| s) && signs.iter().any(|&s| !s)
}

/// Points of `{f ≤ 0}` on the unit sphere mapped to the level `f = 0` along
/// great circles `cos(s) φ + sin(s) u`.
pub fn sphere_boundary_points<F>(f: &F, d: usize, n: usize, seed: u64) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .filter_map(|k| {
            let mut r = rng::substream(seed, k as u64);
            let mut phi = None;
            for _ in 0..200 {
                let p = rng::unit_vec(&mut r, d);
                if f(&p) <= 0.0 {
                    phi = Some(p);
                    break;
                }
            }
            let phi = phi?;
            let u = crate::linalg::proj_perp(&rng::unit_vec(&mut r, d), &phi);
            let un = norm(&u);
            if un < 1e-12 {
                return None;
            }
            let u: Vec<f64> = u.into_iter().map(|x| x / un).collect();
            let circle = |s: &[f64]| -> f64 {
                let p: Vec<f64> = phi.iter().zip(&u).map(|(a, b)| s[0].cos() * a + s[0].sin() * b).collect();
                f(&p)
            };
            let s = ray_crossing(&circle, &[0.0], &[1.0], std::f64::consts::PI)?;
            Some(phi.iter().zip(&u).map(|(a, b)| s[0].cos() * a + s[0].sin() * b).collect())
        })
        .collect()
}
