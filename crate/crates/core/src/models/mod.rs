//! Model families `Φ(w, θ) = φ(θ) w`.
//!
//! A model maps parameters `(w, θ)` to a predictor `x ↦ Φ(w,θ)(x) ∈ R^{d_out}`
//! that is linear in `w`. All evaluation goes through [`ModelSpec`], which
//! also exposes the adjoint `φ(θ)*` and the `θ`-gradient needed by the flow.

mod activation;
pub mod attention;
pub(crate) mod dataset;
mod sigmoid_net;
pub mod softmax;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use activation::{sigmoid, sigmoid_phi, Activation};
pub use attention::{alpha_coarea, dpsi_attention, psi_attention, psi_hardmax, AttentionHead};
pub use dataset::{Dataset, DatasetManifest, SyntheticSpec};
pub use sigmoid_net::SigmoidNet;
pub use softmax::{argmax_set, d2softmax, dsoftmax, hardmax, softmax, DEFAULT_TIE_TOL};

use crate::error::{Error, Result};
use crate::measure::Ensemble;

pub trait ModelSpec: Send + Sync {
    fn d_w(&self) -> usize;
    fn d_theta(&self) -> usize;
    fn d_in(&self) -> usize;
    fn d_out(&self) -> usize;

    /// `Φ(w, θ)(x)`.
    fn phi_apply(&self, theta: &[f64], w: &[f64], x: &[f64]) -> Vec<f64>;

    /// The matrix of `w ↦ φ(θ)(x) w`, row-major `d_out × d_w`.
    fn dphi_w(&self, theta: &[f64], x: &[f64]) -> Vec<f64>;

    /// `φ(θ)(x)ᵀ c` for a cotangent `c ∈ R^{d_out}`.
    fn adjoint_sample(&self, theta: &[f64], x: &[f64], cot: &[f64]) -> Vec<f64>;

    /// `∇_θ ⟨c, Φ(w, θ)(x)⟩`.
    fn grad_theta(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64]) -> Vec<f64>;

    /// `∇²_θ ⟨c, Φ(w, θ)(x)⟩` as a row-major `d_θ × d_θ` matrix, when a
    /// closed form is available.
    fn hess_theta(&self, _theta: &[f64], _w: &[f64], _x: &[f64], _cot: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Adds `scale · φ(θ)(x)ᵀ c` to `acc_w` and `scale · ∇_θ⟨c, Φ(w,θ)(x)⟩`
    /// to `acc_theta`. Implementations share intermediate work.
    fn accumulate_pullback(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64], scale: f64, acc_w: &mut [f64], acc_theta: &mut [f64]) {
        crate::linalg::axpy(scale, &self.adjoint_sample(theta, x, cot), acc_w);
        crate::linalg::axpy(scale, &self.grad_theta(theta, w, x, cot), acc_theta);
    }

    /// `B(x)` with `|Φ(w,θ)(x)| ≤ B(x) |w|` for every `θ`, when `φ` is bounded.
    fn phi_bound(&self, x: &[f64]) -> Option<f64>;

    /// `φ(θ)* r = (1/N) Σ_s φ(θ)(x_s)ᵀ r_s` for a residual array `r`
    /// (row-major `N × d_out`) representing an element of `L²(ρ̂_x)`.
    fn phi_adjoint(&self, theta: &[f64], data: &Dataset, residual: &[f64]) -> Vec<f64> {
        let d_out = self.d_out();
        let mut acc = vec![0.0; self.d_w()];
        for s in 0..data.len() {
            let v = self.adjoint_sample(theta, data.input(s), &residual[s * d_out..(s + 1) * d_out]);
            crate::linalg::axpy(1.0, &v, &mut acc);
        }
        let inv = 1.0 / data.len() as f64;
        acc.iter_mut().for_each(|x| *x *= inv);
        acc
    }
}

/// Serialisable choice of model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Model {
    Sigmoid(SigmoidNet),
    Attention(AttentionHead),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Sigmoid($m) => $e,
            Model::Attention($m) => $e,
        }
    };
}

impl ModelSpec for Model {
    fn d_w(&self) -> usize {
        delegate!(self, m => m.d_w())
    }
    fn d_theta(&self) -> usize {
        delegate!(self, m => m.d_theta())
    }
    fn d_in(&self) -> usize {
        delegate!(self, m => m.d_in())
    }
    fn d_out(&self) -> usize {
        delegate!(self, m => m.d_out())
    }
    fn phi_apply(&self, theta: &[f64], w: &[f64], x: &[f64]) -> Vec<f64> {
        delegate!(self, m => m.phi_apply(theta, w, x))
    }
    fn dphi_w(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        delegate!(self, m => m.dphi_w(theta, x))
    }
    fn adjoint_sample(&self, theta: &[f64], x: &[f64], cot: &[f64]) -> Vec<f64> {
        delegate!(self, m => m.adjoint_sample(theta, x, cot))
    }
    fn grad_theta(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64]) -> Vec<f64> {
        delegate!(self, m => m.grad_theta(theta, w, x, cot))
    }
    fn hess_theta(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64]) -> Option<Vec<f64>> {
        delegate!(self, m => m.hess_theta(theta, w, x, cot))
    }
    fn accumulate_pullback(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64], scale: f64, acc_w: &mut [f64], acc_theta: &mut [f64]) {
        delegate!(self, m => m.accumulate_pullback(theta, w, x, cot, scale, acc_w, acc_theta))
    }
    fn phi_bound(&self, x: &[f64]) -> Option<f64> {
        delegate!(self, m => m.phi_bound(x))
    }
}

pub(crate) fn check_compat<M: ModelSpec + ?Sized>(model: &M, ens: Option<&Ensemble>, data: Option<&Dataset>) -> Result<()> {
    if let Some(e) = ens {
        if e.d_w() != model.d_w() || e.d_theta() != model.d_theta() {
            return Err(Error::dim(format!(
                "ensemble dims ({}, {}) do not match model ({}, {})",
                e.d_w(),
                e.d_theta(),
                model.d_w(),
                model.d_theta()
            )));
        }
    }
    if let Some(d) = data {
        if d.d_in() != model.d_in() || d.d_out() != model.d_out() {
            return Err(Error::dim(format!(
                "dataset dims ({}, {}) do not match model ({}, {})",
                d.d_in(),
                d.d_out(),
                model.d_in(),
                model.d_out()
            )));
        }
    }
    Ok(())
}

/// `∫Φ dμ̂` evaluated on the dataset: row `s` is `(1/m) Σ_i Φ(w_i,θ_i)(x_s)`,
/// returned row-major `N × d_out`.
pub fn predictor_mean<M: ModelSpec + ?Sized>(ens: &Ensemble, model: &M, data: &Dataset) -> Result<Vec<f64>> {
    check_compat(model, Some(ens), Some(data))?;
    Ok(predictor_mean_unchecked(ens, model, data))
}

pub(crate) fn predictor_mean_unchecked<M: ModelSpec + ?Sized>(ens: &Ensemble, model: &M, data: &Dataset) -> Vec<f64> {
    let d_out = model.d_out();
    let inv_m = 1.0 / ens.m() as f64;
    let rows: Vec<Vec<f64>> = (0..data.len())
        .into_par_iter()
        .map(|s| {
            let x = data.input(s);
            let mut acc = vec![0.0; d_out];
            for i in 0..ens.m() {
                let phi = model.phi_apply(ens.theta(i), ens.w(i), x);
                crate::linalg::axpy(1.0, &phi, &mut acc);
            }
            acc.iter_mut().for_each(|v| *v *= inv_m);
            acc
        })
        .collect();
    rows.concat()
}
