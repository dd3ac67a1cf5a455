//! Single softmax attention head `Φ(V, A)(X) = V ψ(A)(X)` with
//! `ψ(A)(X) = Xᵀ softmax(X A x_n)`.
//!
//! Contexts are `n × d` row-major with the query token `x_n` as the last row.
//! `A` is `d × d` and `V` is `k × d`, both row-major.

use serde::{Deserialize, Serialize};

use super::softmax::{argmax_set, dsoftmax_at, softmax};
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::linalg::{dot, matvec, matvec_t, norm, norm_sq};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    /// Token dimension.
    pub d: usize,
    /// Context length.
    pub n_tokens: usize,
    /// Value output dimension.
    pub k: usize,
}

impl AttentionHead {
    pub fn new(d: usize, n_tokens: usize, k: usize) -> Self {
        Self { d, n_tokens, k }
    }

    /// Head with `k = d`.
    pub fn square(d: usize, n_tokens: usize) -> Self {
        Self::new(d, n_tokens, d)
    }
}

fn token(x: &[f64], d: usize, i: usize) -> &[f64] {
    &x[i * d..(i + 1) * d]
}

fn n_of(x: &[f64], d: usize) -> usize {
    debug_assert_eq!(x.len() % d, 0);
    x.len() / d
}

/// Scores `z_i = ⟨A x_n, x_i⟩`.
pub fn scores(a: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    let n = n_of(x, d);
    let q = matvec(a, d, d, token(x, d, n - 1));
    (0..n).map(|i| dot(token(x, d, i), &q)).collect()
}

/// `Σ_i p_i x_i`.
fn combine(x: &[f64], d: usize, p: &[f64]) -> Vec<f64> {
    matvec_t(x, p.len(), d, p)
}

/// Softmax-weighted token average `ψ(A)(X)`.
pub fn psi_attention(a: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    combine(x, d, &softmax(&scores(a, x, d)))
}

/// `[dψ(A)·B](X) = Xᵀ (dσ(XAx_n) · (X B x_n))`.
pub fn dpsi_attention(a: &[f64], b: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    let s = softmax(&scores(a, x, d));
    let h = scores(b, x, d);
    combine(x, d, &dsoftmax_at(&s, &h))
}

/// Hardmax attention `ψ_∞(A)(X)`: the mean of the argmax tokens.
pub fn psi_hardmax(a: &[f64], x: &[f64], d: usize, tie_tol: f64) -> Vec<f64> {
    let set = argmax_set(&scores(a, x, d), tie_tol);
    let mut out = vec![0.0; d];
    for &i in &set {
        crate::linalg::axpy(1.0, token(x, d, i), &mut out);
    }
    let inv = 1.0 / set.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Coarea factor `α_ij(A, X) = |∇_X ⟨A x_n, x_i − x_j⟩|` (0-based `i`, `j`;
/// index `n − 1` is the query token).
pub fn alpha_coarea(a: &[f64], x: &[f64], d: usize, i: usize, j: usize) -> Result<f64> {
    let n = n_of(x, d);
    if i == j {
        return Err(Error::invalid("alpha_coarea requires i != j"));
    }
    if i >= n || j >= n {
        return Err(Error::invalid("token index out of range"));
    }
    let last = n - 1;
    let xn = token(x, d, last);
    let axn = matvec(a, d, d, xn);
    let diff: Vec<f64> = token(x, d, i).iter().zip(token(x, d, j)).map(|(p, q)| p - q).collect();
    let at_diff = matvec_t(a, d, d, &diff);
    let v = if i != last && j != last {
        2.0 * norm_sq(&axn) + norm_sq(&at_diff)
    } else if i == last {
        let t: Vec<f64> = at_diff.iter().zip(&axn).map(|(p, q)| p + q).collect();
        norm_sq(&axn) + norm_sq(&t)
    } else {
        let t: Vec<f64> = at_diff.iter().zip(&axn).map(|(p, q)| p - q).collect();
        norm_sq(&axn) + norm_sq(&t)
    };
    Ok(v.sqrt())
}

impl ModelSpec for AttentionHead {
    fn d_w(&self) -> usize {
        self.k * self.d
    }

    fn d_theta(&self) -> usize {
        self.d * self.d
    }

    fn d_in(&self) -> usize {
        self.n_tokens * self.d
    }

    fn d_out(&self) -> usize {
        self.k
    }

    fn phi_apply(&self, theta: &[f64], w: &[f64], x: &[f64]) -> Vec<f64> {
        let psi = psi_attention(theta, x, self.d);
        matvec(w, self.k, self.d, &psi)
    }

    fn dphi_w(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        // row a of the k × (k·d) matrix holds ψ in block a
        let psi = psi_attention(theta, x, self.d);
        let (k, d) = (self.k, self.d);
        let mut m = vec![0.0; k * k * d];
        for a in 0..k {
            m[a * k * d + a * d..a * k * d + (a + 1) * d].copy_from_slice(&psi);
        }
        m
    }

    fn adjoint_sample(&self, theta: &[f64], x: &[f64], cot: &[f64]) -> Vec<f64> {
        let psi = psi_attention(theta, x, self.d);
        cot.iter().flat_map(|c| psi.iter().map(move |p| c * p)).collect()
    }

    fn grad_theta(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d * self.d];
        let mut dummy = vec![0.0; self.k * self.d];
        self.accumulate_pullback(theta, w, x, cot, 1.0, &mut dummy, &mut g);
        g
    }

    fn accumulate_pullback(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64], scale: f64, acc_w: &mut [f64], acc_theta: &mut [f64]) {
        let d = self.d;
        let n = n_of(x, d);
        let s = softmax(&scores(theta, x, d));
        let psi = combine(x, d, &s);
        for (a, c) in cot.iter().enumerate() {
            for (b, p) in psi.iter().enumerate() {
                acc_w[a * d + b] += scale * c * p;
            }
        }
        // ⟨c, Vψ⟩ = ⟨Vᵀc, ψ⟩ = Σ_i s_i ⟨u, x_i⟩ with u = Vᵀc
        let u = matvec_t(w, self.k, d, cot);
        let proj: Vec<f64> = (0..n).map(|i| dot(&u, token(x, d, i))).collect();
        let b = dsoftmax_at(&s, &proj);
        // ∇_A = (Xᵀ b) x_nᵀ
        let xb = combine(x, d, &b);
        let xn = token(x, d, n - 1);
        for r in 0..d {
            let f = scale * xb[r];
            for c in 0..d {
                acc_theta[r * d + c] += f * xn[c];
            }
        }
    }

    fn phi_bound(&self, x: &[f64]) -> Option<f64> {
        // |Vψ| ≤ ‖V‖_F |ψ| and |ψ| ≤ max_i |x_i| by convexity
        let n = n_of(x, self.d);
        Some((0..n).map(|i| norm(token(x, self.d, i))).fold(0.0, f64::max))
    }
}
