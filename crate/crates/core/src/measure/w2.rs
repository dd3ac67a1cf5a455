//! Wasserstein-2 distances between uniformly weighted ensembles.
//!
//! For equal particle counts the optimal plan is a permutation, so the exact
//! distance reduces to a linear assignment problem on squared Euclidean
//! costs, solved here by the O(m³) shortest-augmenting-path Hungarian method.

use rayon::prelude::*;

use super::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot};
use crate::rng;

/// Largest particle count accepted by [`w2_exact`].
pub const EXACT_W2_CAP: usize = 512;

/// Minimum-cost perfect matching for a square cost matrix (row-major,
/// `n × n`). Returns `col[i]`, the column assigned to row `i`.
pub fn assignment(costs: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(costs.len(), n * n, "cost matrix must be n × n");
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    // 1-based potentials; p[j] is the row matched to column j, 0 = free
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &costs[(i0 - 1) * n..i0 * n];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    col
}

fn check_pair(a: &Ensemble, b: &Ensemble) -> Result<()> {
    if a.d_w() != b.d_w() || a.d_theta() != b.d_theta() {
        return Err(Error::dim(format!(
            "ensembles live in different spaces: ({}, {}) vs ({}, {})",
            a.d_w(),
            a.d_theta(),
            b.d_w(),
            b.d_theta()
        )));
    }
    if a.m() != b.m() {
        return Err(Error::dim(format!("particle counts differ: {} vs {}", a.m(), b.m())));
    }
    Ok(())
}

/// Exact `W₂` between two ensembles of equal size `m ≤ EXACT_W2_CAP`.
pub fn w2_exact(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_pair(a, b)?;
    let m = a.m();
    if m > EXACT_W2_CAP {
        return Err(Error::ExactW2Cap { m, cap: EXACT_W2_CAP });
    }
    let costs: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let ai = a.row(i);
            (0..m).map(move |j| dist_sq(ai, b.row(j)))
        })
        .collect();
    let col = assignment(&costs, m);
    let total: f64 = col.iter().enumerate().map(|(i, &j)| costs[i * m + j]).sum();
    Ok((total / m as f64).max(0.0).sqrt())
}

/// Exact 1-D `W₂` between two equal-size samples via sorted matching.
fn w2_1d(mut xs: Vec<f64>, mut ys: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let s: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / xs.len() as f64).sqrt()
}

/// Monte-Carlo sliced `W₂`: the mean over `n_projections` uniform random
/// directions of the 1-D `W₂` between projected samples. Direction `k` is
/// drawn from substream `k` of `seed`, so the result does not depend on the
/// thread count.
pub fn w2_sliced(a: &Ensemble, b: &Ensemble, n_projections: usize, seed: u64) -> Result<f64> {
    check_pair(a, b)?;
    if n_projections == 0 {
        return Err(Error::invalid("n_projections must be >= 1"));
    }
    let dim = a.dim();
    let per_slice: Vec<f64> = (0..n_projections)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::substream(seed, k as u64);
            let dir = rng::unit_vec(&mut r, dim);
            let xs = a.rows().map(|u| dot(u, &dir)).collect();
            let ys = b.rows().map(|u| dot(u, &dir)).collect();
            w2_1d(xs, ys)
        })
        .collect();
    Ok(per_slice.iter().sum::<f64>() / n_projections as f64)
}

/// Largest particle count accepted by [`w2_brute_force`].
pub const BRUTE_FORCE_CAP: usize = 8;

/// Permutation brute force: `min_σ (1/m) Σ |a_i − b_σ(i)|²`, square-rooted.
pub fn w2_brute_force(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    fn rec(a: &Ensemble, b: &Ensemble, i: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        let m = a.m();
        if i == m {
            *best = best.min(acc);
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                rec(a, b, i + 1, used, acc + dist_sq(a.row(i), b.row(j)), best);
                used[j] = false;
            }
        }
    }
    check_pair(a, b)?;
    if a.m() > BRUTE_FORCE_CAP {
        return Err(Error::invalid(format!("brute force is capped at m = {BRUTE_FORCE_CAP}")));
    }
    if a.m() == 0 {
        return Ok(0.0);
    }
    let mut best = f64::INFINITY;
    rec(a, b, 0, &mut vec![false; a.m()], 0.0, &mut best);
    Ok((best / a.m() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct W2SelfTest {
    pub n_instances: usize,
    pub max_m: usize,
    /// Largest `|exact − brute force|` over all instances.
    pub max_exact_gap: f64,
    /// Largest `|sliced − exact|` over the 1-D instances.
    pub max_sliced_gap_1d: f64,
    pub pass: bool,
}

/// Oracle suite: `n_instances` random ensemble pairs with `m` cycling through
/// `1..=max_m` and varied shapes, exact solver against permutation brute
/// force; plus 1-D pairs comparing sliced against exact.
pub fn w2_selftest(n_instances: usize, max_m: usize, seed: u64) -> Result<W2SelfTest> {
    if max_m == 0 || max_m > BRUTE_FORCE_CAP {
        return Err(Error::invalid(format!("max_m must lie in 1..={BRUTE_FORCE_CAP}")));
    }
    let mut max_exact_gap: f64 = 0.0;
    let mut max_sliced_gap_1d: f64 = 0.0;
    for k in 0..n_instances {
        let mut r = rng::substream(seed, k as u64);
        let m = 1 + k % max_m;
        let d_w = 1 + k % 2;
        let d_theta = k % 3;
        let draw = |r: &mut rng::SimRng, dim: usize| {
            let scale = 0.5 + rand::Rng::random::<f64>(r) * 2.0;
            let rows: Vec<Vec<f64>> = (0..m).map(|_| rng::normal_vec(r, dim).into_iter().map(|x| scale * x).collect()).collect();
            rows
        };
        let a = Ensemble::from_rows(d_w, d_theta, &draw(&mut r, d_w + d_theta))?;
        let b = Ensemble::from_rows(d_w, d_theta, &draw(&mut r, d_w + d_theta))?;
        max_exact_gap = max_exact_gap.max((w2_exact(&a, &b)? - w2_brute_force(&a, &b)?).abs());

        let a1 = Ensemble::from_rows(1, 0, &draw(&mut r, 1))?;
        let b1 = Ensemble::from_rows(1, 0, &draw(&mut r, 1))?;
        let exact = w2_exact(&a1, &b1)?;
        max_sliced_gap_1d = max_sliced_gap_1d.max((w2_sliced(&a1, &b1, 8, seed ^ k as u64)? - exact).abs());
    }
    Ok(W2SelfTest { n_instances, max_m, max_exact_gap, max_sliced_gap_1d, pass: max_exact_gap <= 1e-12 && max_sliced_gap_1d <= 1e-10 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{sample_ensemble, InitSpec};

    #[test]
    fn identical_is_zero() {
        let a = sample_ensemble(&InitSpec::gaussian(2, 3, 1.0, 1), 40).unwrap();
        assert_eq!(w2_exact(&a, &a).unwrap(), 0.0);
        assert_eq!(w2_sliced(&a, &a, 16, 3).unwrap(), 0.0);
    }

    #[test]
    fn point_masses() {
        let p = Ensemble::from_rows(1, 1, &[vec![1.0, 2.0]]).unwrap();
        let q = Ensemble::from_rows(1, 1, &[vec![4.0, 6.0]]).unwrap();
        assert!((w2_exact(&p, &q).unwrap() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_m5() {
        for seed in 0..20 {
            let a = sample_ensemble(&InitSpec::gaussian(1, 2, 1.0, seed), 5).unwrap();
            let b = sample_ensemble(&InitSpec::gaussian(1, 2, 1.5, seed + 100), 5).unwrap();
            let exact = w2_exact(&a, &b).unwrap();
            assert!((exact - w2_brute_force(&a, &b).unwrap()).abs() <= 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn selftest_passes() {
        let rep = w2_selftest(60, 6, 1).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(w2_selftest(1, 9, 1).is_err());
    }

    #[test]
    fn sliced_equals_exact_in_one_dimension() {
        let a = sample_ensemble(&InitSpec::gaussian(1, 0, 1.0, 4), 30).unwrap();
        let b = sample_ensemble(&InitSpec::gaussian(1, 0, 2.0, 5), 30).unwrap();
        let exact = w2_exact(&a, &b).unwrap();
        for n in [1, 7, 50] {
            assert!((w2_sliced(&a, &b, n, 99).unwrap() - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn sliced_below_exact() {
        for seed in 0..10 {
            let a = sample_ensemble(&InitSpec::gaussian(2, 2, 1.0, seed), 64).unwrap();
            let b = sample_ensemble(&InitSpec::gaussian(2, 2, 1.3, seed + 50), 64).unwrap();
            let exact = w2_exact(&a, &b).unwrap();
            // every slice is a 1-Lipschitz image, so each term is <= W2
            assert!(w2_sliced(&a, &b, 200, seed).unwrap() <= exact + 1e-12);
        }
    }

    #[test]
    fn errors() {
        let a = sample_ensemble(&InitSpec::gaussian(1, 1, 1.0, 0), 3).unwrap();
        let b = sample_ensemble(&InitSpec::gaussian(1, 2, 1.0, 0), 3).unwrap();
        assert!(matches!(w2_exact(&a, &b), Err(Error::Dimension(_))));
        assert!(matches!(w2_sliced(&a, &a, 0, 0), Err(Error::InvalidArgument(_))));
        let big = sample_ensemble(&InitSpec::gaussian(1, 1, 1.0, 0), EXACT_W2_CAP + 1).unwrap();
        assert!(matches!(w2_exact(&big, &big), Err(Error::ExactW2Cap { .. })));
    }
}
