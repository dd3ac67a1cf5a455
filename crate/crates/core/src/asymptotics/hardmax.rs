use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sphere::SphereSampler;
use crate::error::{Error, Result};
use crate::models::attention::scores;
use crate::models::{argmax_set, softmax, Dataset, DEFAULT_TIE_TOL};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub r: f64,
    pub direction: usize,
    pub gap: f64,
    pub stderr: f64,
}

/// Sampled sup over directions of the empirical `L²` gap between `ψ(rA)` and
/// `ψ_∞(A)`; a lower bound on the true sup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceScan {
    pub r_grid: Vec<f64>,
    pub sup_gaps: Vec<f64>,
    /// Standard error of the gap at the maximising direction.
    pub sup_stderr: Vec<f64>,
    pub argmax_direction: Vec<usize>,
    pub n_contexts: usize,
    pub n_directions: usize,
    /// Softmax weights outside the simplex (negative or not summing to one).
    pub hull_violations: usize,
    pub rows: Vec<GapRow>,
}

impl ConvergenceScan {
    pub fn strictly_decreasing(&self) -> bool {
        self.sup_gaps.windows(2).all(|w| w[1] < w[0])
    }

    /// `sup_gap(r_{k+1}) ≤ sup_gap(r_k) + k_se · (se_k + se_{k+1})` along the grid.
    pub fn nonincreasing_within(&self, k_se: f64) -> bool {
        (1..self.sup_gaps.len()).all(|k| self.sup_gaps[k] <= self.sup_gaps[k - 1] + k_se * (self.sup_stderr[k] + self.sup_stderr[k - 1]))
    }

    /// Per-direction rows `r, direction, gap, stderr`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        wr.write_record(["r", "direction", "gap", "stderr"])?;
        for row in &self.rows {
            wr.write_record([
                format!("{:e}", row.r),
                row.direction.to_string(),
                format!("{:.17e}", row.gap),
                format!("{:.17e}", row.stderr),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Columns `r sup_gap stderr` for plotting.
    pub fn gnuplot_rows(&self) -> Vec<Vec<f64>> {
        (0..self.r_grid.len()).map(|k| vec![self.r_grid[k], self.sup_gaps[k], self.sup_stderr[k]]).collect()
    }
}

/// For each direction `A` and each `r`, `√((1/N) Σ_X |ψ(rA)(X) − ψ_∞(A)(X)|²)`
/// over the contexts of `data`.
pub fn hardmax_convergence_scan(data: &Dataset, sphere: &SphereSampler, r_grid: &[f64]) -> Result<ConvergenceScan> {
    let n_tok = data.n_tokens().ok_or_else(|| Error::invalid("the dataset does not hold token contexts"))?;
    let d = data.d_in() / n_tok;
    if sphere.dim != d * d {
        return Err(Error::dim(format!("sphere dimension {} != d^2 = {}", sphere.dim, d * d)));
    }
    if data.is_empty() {
        return Err(Error::invalid("context dataset is empty"));
    }
    if r_grid.iter().any(|&r| !(r >= 0.0 && r.is_finite())) || r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("r_grid must be nonnegative and strictly increasing"));
    }
    let dirs = sphere.points();
    let n = data.len();
    // per direction: for each r, (gap, stderr, hull violations)
    let per_dir: Vec<Vec<(f64, f64, usize)>> = dirs
        .par_iter()
        .map(|a| {
            let hard: Vec<Vec<f64>> = (0..n)
                .map(|s| {
                    let x = data.input(s);
                    let set = argmax_set(&scores(a, x, d), DEFAULT_TIE_TOL);
                    let mut out = vec![0.0; d];
                    for &i in &set {
                        crate::linalg::axpy(1.0 / set.len() as f64, &x[i * d..(i + 1) * d], &mut out);
                    }
                    out
                })
                .collect();
            r_grid
                .iter()
                .map(|&r| {
                    let ra: Vec<f64> = a.iter().map(|v| r * v).collect();
                    let mut viol = 0;
                    let sq: Vec<f64> = (0..n)
                        .map(|s| {
                            let x = data.input(s);
                            let p = softmax(&scores(&ra, x, d));
                            if p.iter().any(|&v| v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                                viol += 1;
                            }
                            let psi = crate::linalg::matvec_t(x, n_tok, d, &p);
                            crate::linalg::dist_sq(&psi, &hard[s])
                        })
                        .collect();
                    let (m, se) = super::mean_se(&sq);
                    let gap = m.sqrt();
                    // delta method for the square root
                    let gse = if gap > 0.0 { se / (2.0 * gap) } else { 0.0 };
                    (gap, gse, viol)
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(dirs.len() * r_grid.len());
    let (mut sup_gaps, mut sup_stderr, mut argmax_direction) = (Vec::new(), Vec::new(), Vec::new());
    let mut hull_violations = 0;
    for (k, &r) in r_grid.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0.0, 0usize);
        for (j, pd) in per_dir.iter().enumerate() {
            let (gap, se, viol) = pd[k];
            hull_violations += viol;
            rows.push(GapRow { r, direction: j, gap, stderr: se });
            if gap > best.0 {
                best = (gap, se, j);
            }
        }
        sup_gaps.push(best.0);
        sup_stderr.push(best.1);
        argmax_direction.push(best.2);
    }
    Ok(ConvergenceScan {
        r_grid: r_grid.to_vec(),
        sup_gaps,
        sup_stderr,
        argmax_direction,
        n_contexts: n,
        n_directions: dirs.len(),
        hull_violations,
        rows,
    })
}
