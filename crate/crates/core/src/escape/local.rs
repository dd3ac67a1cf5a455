//! Local constants at a nondegenerate maximiser of `½|g|²`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::field::{hessian_vector_field, FieldG};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng;

pub const C2_STARTS: usize = 16;
pub const C2_MESH: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalConstants {
    /// `sup_{⟨Hx,x⟩=1} |Jx|`.
    pub c1: f64,
    /// `inf_{⟨Hx,x⟩=1} |Hx|² / |JHx|`.
    pub c2: f64,
    /// Projected-gradient minimum.
    pub c2_descent: f64,
    /// Mesh minimum, for `d_θ ≤ 3`.
    pub c2_mesh: Option<f64>,
    pub pass: bool,
}

fn sym_sqrt_pair(h: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let e = SymmetricEigen::new(h.clone());
    let q = &e.eigenvectors;
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(f64::sqrt));
    let si = DMatrix::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt()));
    (q * s * q.transpose(), q * si * q.transpose())
}

/// `J` row-major `d_w × d_θ`, `H` row-major `d_θ × d_θ`, symmetric positive
/// definite with `JᵀJ ≺ H`.
pub fn local_constants(j: &[f64], h: &[f64], d_w: usize, d_theta: usize, seed: u64) -> Result<LocalConstants> {
    if j.len() != d_w * d_theta || h.len() != d_theta * d_theta {
        return Err(Error::dim("J must be d_w x d_theta and H d_theta x d_theta"));
    }
    let jm = DMatrix::from_row_slice(d_w, d_theta, j);
    let hm = DMatrix::from_row_slice(d_theta, d_theta, h);
    let asym = (&hm - hm.transpose()).amax();
    if asym > 1e-10 * hm.amax().max(1.0) {
        return Err(Error::Precondition(format!("H is not symmetric (max asymmetry {asym:.3e})")));
    }
    if hm.clone().cholesky().is_none() {
        return Err(Error::Precondition("H is not positive definite".into()));
    }
    let (hs, hsi) = sym_sqrt_pair(&hm);
    let m = &hsi * jm.transpose() * &jm * &hsi;
    let lmax = SymmetricEigen::new(0.5 * (&m + m.transpose())).eigenvalues.max().max(0.0);
    let c1 = lmax.sqrt();
    if c1 >= 1.0 {
        return Err(Error::Precondition(format!("nondegeneracy J^T J < H violated (lambda_max of H^-1/2 J^T J H^-1/2 = {lmax:.6})")));
    }
    // with y = H^{1/2} x on the unit sphere the objective is yᵀHy / |J H^{1/2} y|
    let b = &jm * &hs;
    let obj = |y: &DVector<f64>| -> f64 {
        let den = (&b * y).norm();
        if den == 0.0 {
            f64::INFINITY
        } else {
            y.dot(&(&hm * y)) / den
        }
    };
    let grad = |y: &DVector<f64>| -> DVector<f64> {
        let by = &b * y;
        let den = by.norm();
        let num = y.dot(&(&hm * y));
        let ga = 2.0 * (&hm * y);
        let gb = b.transpose() * by / den;
        (ga * den - gb * num) / (den * den)
    };
    let mut r = rng::seeded(seed);
    let mut best = f64::INFINITY;
    for k in 0..C2_STARTS {
        let mut y = if k < d_theta {
            DVector::from_fn(d_theta, |i, _| (i == k) as u8 as f64)
        } else {
            DVector::from_vec(rng::unit_vec(&mut r, d_theta))
        };
        let mut fy = obj(&y);
        if !fy.is_finite() {
            continue;
        }
        let mut step = 0.1;
        for _ in 0..2000 {
            let gr = grad(&y);
            let tang = &gr - &y * y.dot(&gr);
            if tang.norm() < 1e-13 {
                break;
            }
            let mut moved = false;
            while step > 1e-16 {
                let cand = (&y - &tang * step).normalize();
                let fc = obj(&cand);
                if fc < fy {
                    y = cand;
                    fy = fc;
                    step *= 1.5;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        best = best.min(fy);
    }
    let c2_mesh =
        (d_theta <= 3).then(|| sphere_mesh(d_theta).iter().map(|p| obj(&DVector::from_column_slice(p))).fold(f64::INFINITY, f64::min));
    let c2 = c2_mesh.map_or(best, |m| m.min(best));
    Ok(LocalConstants { c1, c2, c2_descent: best, c2_mesh, pass: c1 < c2 })
}

fn sphere_mesh(d: usize) -> Vec<Vec<f64>> {
    let n = C2_MESH;
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![rho * a.cos(), rho * a.sin(), z]
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaximizerAnalysis {
    pub theta_star: Vec<f64>,
    /// `|g(θ*)|`.
    pub eta_max: f64,
    /// `−g(θ*)/|g(θ*)|`.
    pub v: Vec<f64>,
    /// `|J_g(θ*)ᵀ g(θ*)|`, zero at a critical point.
    pub stationarity: f64,
    pub jacobian: Vec<f64>,
    /// `−H_g(θ*)[g(θ*)]`.
    pub h: Vec<f64>,
    pub constants: LocalConstants,
}

/// `J` and `H = −H_g(θ*)[g(θ*)]` at a candidate maximiser of `½|g|²` and
/// their local constants.
pub fn analyze_maximizer(g: &dyn FieldG, theta_star: &[f64], seed: u64) -> Result<MaximizerAnalysis> {
    let gv = g.g(theta_star);
    let eta_max = norm(&gv);
    if eta_max == 0.0 {
        return Err(Error::Precondition("g vanishes at the candidate point".into()));
    }
    let jac = g.jacobian(theta_star);
    let stationarity = norm(&g.jacobian_t(theta_star, &gv));
    let h: Vec<f64> = hessian_vector_field(g, theta_star, &gv).into_iter().map(|x| -x).collect();
    let constants = local_constants(&jac, &h, g.d_w(), g.d_theta(), seed)?;
    let _ = dot;
    Ok(MaximizerAnalysis {
        theta_star: theta_star.to_vec(),
        eta_max,
        v: gv.iter().map(|x| -x / eta_max).collect(),
        stationarity,
        jacobian: jac,
        h,
        constants,
    })
}
