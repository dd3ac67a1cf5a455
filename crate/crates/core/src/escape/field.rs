use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flow::Residual;
use crate::linalg::{dot, norm, norm_sq};
use crate::models::{Dataset, ModelSpec};
use crate::rng;

/// A field `g : R^{d_θ} → R^{d_w}` with its Jacobian.
pub trait FieldG: Send + Sync {
    fn d_w(&self) -> usize;
    fn d_theta(&self) -> usize;
    fn g(&self, theta: &[f64]) -> Vec<f64>;
    /// Row-major `d_w × d_θ`.
    fn jacobian(&self, theta: &[f64]) -> Vec<f64>;
    /// `H_g(θ)[u]`, row-major `d_θ × d_θ`, when available in closed form.
    fn hessian_vector(&self, _theta: &[f64], _u: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// `J_g(θ)ᵀ u`.
    fn jacobian_t(&self, theta: &[f64], u: &[f64]) -> Vec<f64> {
        crate::linalg::matvec_t(&self.jacobian(theta), self.d_w(), self.d_theta(), u)
    }
}

/// The limit `g_∞` of `φ ↦ g(rφ)` on the unit sphere.
pub trait AsymptoticField: Send + Sync {
    fn value(&self, phi: &[f64]) -> f64;
    /// Spherical gradient `∇_𝕊 g_∞(φ) ∈ {φ}^⊥`.
    fn grad_sphere(&self, phi: &[f64]) -> Vec<f64>;
}

/// `H_g(θ)[u]`, in closed form when the field provides it and otherwise by
/// central differences of `θ ↦ J_g(θ)ᵀ u`.
pub fn hessian_vector_field(g: &dyn FieldG, theta: &[f64], u: &[f64]) -> Vec<f64> {
    if let Some(h) = g.hessian_vector(theta, u) {
        return h;
    }
    let d = g.d_theta();
    let mut out = vec![0.0; d * d];
    for j in 0..d {
        let step = 1e-5 * theta[j].abs().max(1.0);
        let mut p = theta.to_vec();
        let mut q = theta.to_vec();
        p[j] += step;
        q[j] -= step;
        let jp = g.jacobian_t(&p, u);
        let jq = g.jacobian_t(&q, u);
        for i in 0..d {
            out[i * d + j] = (jp[i] - jq[i]) / (2.0 * step);
        }
    }
    // symmetrise the difference quotient
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (out[i * d + j] + out[j * d + i]);
            out[i * d + j] = s;
            out[j * d + i] = s;
        }
    }
    out
}

/// Sampled sup-norm bounds of a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupNorms {
    /// `‖g‖_∞`.
    pub g: f64,
    /// `‖J_g‖_∞` (Frobenius norm, which is the Euclidean gradient norm when `d_w = 1`).
    pub jacobian: f64,
    /// `sup_r ‖r J_g(r·)‖_∞` over the sampled radii.
    pub radial_jacobian: f64,
}

impl SupNorms {
    /// `‖g‖_X = ‖g‖_∞ + sup_r ‖r J_g(r·)‖_∞`.
    pub fn x_norm(&self) -> f64 {
        self.g + self.radial_jacobian
    }
}

/// Estimates sup norms over `n_dirs` random directions and a geometric grid
/// of radii in `[0, r_max]`.
pub fn estimate_sup_norms(g: &dyn FieldG, n_dirs: usize, r_max: f64, seed: u64) -> SupNorms {
    use rayon::prelude::*;
    let d = g.d_theta();
    let mut radii = vec![0.0];
    let mut rad = 1e-3;
    while rad <= r_max {
        radii.push(rad);
        rad *= 1.05;
    }
    let zero = SupNorms { g: 0.0, jacobian: 0.0, radial_jacobian: 0.0 };
    (0..n_dirs)
        .into_par_iter()
        .map(|k| {
            let dir = rng::unit_vec(&mut rng::substream(seed, k as u64), d);
            let mut out = zero.clone();
            for &rad in &radii {
                let th: Vec<f64> = dir.iter().map(|x| rad * x).collect();
                let jn = norm(&g.jacobian(&th));
                out.g = out.g.max(norm(&g.g(&th)));
                out.jacobian = out.jacobian.max(jn);
                out.radial_jacobian = out.radial_jacobian.max(rad * jn);
            }
            out
        })
        .reduce(
            || zero.clone(),
            |a, b| SupNorms {
                g: a.g.max(b.g),
                jacobian: a.jacobian.max(b.jacobian),
                radial_jacobian: a.radial_jacobian.max(b.radial_jacobian),
            },
        )
}

/// Closed-form fields used by experiments and tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "kebab-case")]
pub enum ClosedFormField {
    /// `g(θ) = value`.
    Constant { value: Vec<f64>, d_theta: usize },
    /// `g(θ) = −(offset + amplitude / (1 + |θ|²)) · v`.
    Radial { v: Vec<f64>, offset: f64, amplitude: f64, d_theta: usize },
    /// Scalar `g(θ) = −offset − slope · θ₁ / √(1 + |θ|²)`, whose level sets
    /// are unbounded; `g_∞(φ) = −offset − slope · φ₁`.
    Tilted { offset: f64, slope: f64, d_theta: usize },
    /// `d_θ = 1`, `d_w = 2`: `g(θ) = −(1, θ) / (1 + θ²)`. `½|g|²` has a
    /// nondegenerate maximum at `θ = 0`.
    Rotating,
    /// `g_k(θ) = Σ_j a_kj sin(⟨b_kj, θ⟩ + c_kj)`, a smooth bounded field.
    Trig { d_w: usize, d_theta: usize, a: Vec<f64>, b: Vec<f64>, c: Vec<f64> },
}

impl ClosedFormField {
    pub fn zero(d_w: usize, d_theta: usize) -> Self {
        ClosedFormField::Constant { value: vec![0.0; d_w], d_theta }
    }

    /// `g(θ) = −1/(1 + |θ|²) − ½` in dimension `d_theta`, scalar output.
    pub fn radial_scalar(d_theta: usize) -> Self {
        ClosedFormField::Radial { v: vec![1.0], offset: 0.5, amplitude: 1.0, d_theta }
    }

    /// Random trig field with `terms` terms per output coordinate.
    pub fn random_trig(d_w: usize, d_theta: usize, terms: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let a = rng::normal_vec(&mut r, d_w * terms).into_iter().map(|x| x / terms as f64).collect();
        let b = rng::normal_vec(&mut r, d_w * terms * d_theta);
        let c = (0..d_w * terms).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
        ClosedFormField::Trig { d_w, d_theta, a, b, c }
    }

    fn trig_terms(&self) -> usize {
        match self {
            ClosedFormField::Trig { d_w, a, .. } => a.len() / d_w,
            _ => 0,
        }
    }
}

impl FieldG for ClosedFormField {
    fn d_w(&self) -> usize {
        match self {
            ClosedFormField::Constant { value, .. } => value.len(),
            ClosedFormField::Radial { v, .. } => v.len(),
            ClosedFormField::Tilted { .. } => 1,
            ClosedFormField::Rotating => 2,
            ClosedFormField::Trig { d_w, .. } => *d_w,
        }
    }

    fn d_theta(&self) -> usize {
        match self {
            ClosedFormField::Constant { d_theta, .. }
            | ClosedFormField::Radial { d_theta, .. }
            | ClosedFormField::Tilted { d_theta, .. }
            | ClosedFormField::Trig { d_theta, .. } => *d_theta,
            ClosedFormField::Rotating => 1,
        }
    }

    fn g(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            ClosedFormField::Constant { value, .. } => value.clone(),
            ClosedFormField::Radial { v, offset, amplitude, .. } => {
                let h = offset + amplitude / (1.0 + norm_sq(theta));
                v.iter().map(|x| -h * x).collect()
            }
            ClosedFormField::Tilted { offset, slope, .. } => {
                vec![-offset - slope * theta[0] / (1.0 + norm_sq(theta)).sqrt()]
            }
            ClosedFormField::Rotating => {
                let q = 1.0 + theta[0] * theta[0];
                vec![-1.0 / q, -theta[0] / q]
            }
            ClosedFormField::Trig { d_w, d_theta, a, b, c } => {
                let t = self.trig_terms();
                (0..*d_w)
                    .map(|k| {
                        (0..t)
                            .map(|j| {
                                let idx = k * t + j;
                                a[idx] * (dot(&b[idx * d_theta..(idx + 1) * d_theta], theta) + c[idx]).sin()
                            })
                            .sum()
                    })
                    .collect()
            }
        }
    }

    fn jacobian(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.d_theta();
        match self {
            ClosedFormField::Constant { value, .. } => vec![0.0; value.len() * d],
            ClosedFormField::Radial { v, amplitude, .. } => {
                // ∇h = −2 amplitude θ / (1+|θ|²)²
                let q = 1.0 + norm_sq(theta);
                let k = 2.0 * amplitude / (q * q);
                v.iter().flat_map(|vi| theta.iter().map(move |t| vi * k * t)).collect()
            }
            ClosedFormField::Tilted { slope, .. } => {
                let s2 = 1.0 + norm_sq(theta);
                let s = s2.sqrt();
                (0..d)
                    .map(|j| {
                        let e = if j == 0 { 1.0 } else { 0.0 };
                        -slope * (e / s - theta[0] * theta[j] / (s2 * s))
                    })
                    .collect()
            }
            ClosedFormField::Rotating => {
                let t = theta[0];
                let q = 1.0 + t * t;
                vec![2.0 * t / (q * q), -(1.0 - t * t) / (q * q)]
            }
            ClosedFormField::Trig { d_w, d_theta, a, b, c } => {
                let t = self.trig_terms();
                let mut out = vec![0.0; d_w * d_theta];
                for k in 0..*d_w {
                    for j in 0..t {
                        let idx = k * t + j;
                        let bj = &b[idx * d_theta..(idx + 1) * d_theta];
                        let cs = a[idx] * (dot(bj, theta) + c[idx]).cos();
                        for (o, bb) in out[k * d_theta..(k + 1) * d_theta].iter_mut().zip(bj) {
                            *o += cs * bb;
                        }
                    }
                }
                out
            }
        }
    }

    fn hessian_vector(&self, theta: &[f64], u: &[f64]) -> Option<Vec<f64>> {
        let d = self.d_theta();
        match self {
            ClosedFormField::Constant { .. } => Some(vec![0.0; d * d]),
            ClosedFormField::Radial { v, amplitude, .. } => {
                // ∂_ij [2a θ_j / q²] = 2a (δ_ij / q² − 4 θ_i θ_j / q³)
                let q = 1.0 + norm_sq(theta);
                let vu = dot(v, u);
                let mut h = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * d + j] = vu * 2.0 * amplitude * (delta / (q * q) - 4.0 * theta[i] * theta[j] / (q * q * q));
                    }
                }
                Some(h)
            }
            ClosedFormField::Rotating => {
                let t = theta[0];
                let q = 1.0 + t * t;
                let g1 = (2.0 - 6.0 * t * t) / (q * q * q);
                let g2 = (6.0 * t - 2.0 * t * t * t) / (q * q * q);
                Some(vec![g1 * u[0] + g2 * u[1]])
            }
            ClosedFormField::Trig { d_w, d_theta, a, b, c } => {
                let t = self.trig_terms();
                let mut h = vec![0.0; d * d];
                for k in 0..*d_w {
                    for j in 0..t {
                        let idx = k * t + j;
                        let bj = &b[idx * d_theta..(idx + 1) * d_theta];
                        let s = -u[k] * a[idx] * (dot(bj, theta) + c[idx]).sin();
                        for p in 0..d {
                            for q in 0..d {
                                h[p * d + q] += s * bj[p] * bj[q];
                            }
                        }
                    }
                }
                Some(h)
            }
            ClosedFormField::Tilted { .. } => None,
        }
    }
}

/// `g_∞(φ) = −offset − slope · φ₁` for [`ClosedFormField::Tilted`].
#[derive(Clone, Debug, PartialEq)]
pub struct TiltedLimit {
    pub offset: f64,
    pub slope: f64,
}

impl AsymptoticField for TiltedLimit {
    fn value(&self, phi: &[f64]) -> f64 {
        -self.offset - self.slope * phi[0]
    }

    fn grad_sphere(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter().enumerate().map(|(j, p)| -self.slope * ((j == 0) as u8 as f64 - phi[0] * p)).collect()
    }
}

/// `−g` for a scalar field.
pub struct Negated<'a>(pub &'a dyn FieldG);

impl FieldG for Negated<'_> {
    fn d_w(&self) -> usize {
        self.0.d_w()
    }
    fn d_theta(&self) -> usize {
        self.0.d_theta()
    }
    fn g(&self, theta: &[f64]) -> Vec<f64> {
        self.0.g(theta).into_iter().map(|x| -x).collect()
    }
    fn jacobian(&self, theta: &[f64]) -> Vec<f64> {
        self.0.jacobian(theta).into_iter().map(|x| -x).collect()
    }
    fn hessian_vector(&self, theta: &[f64], u: &[f64]) -> Option<Vec<f64>> {
        self.0.hessian_vector(theta, u).map(|h| h.into_iter().map(|x| -x).collect())
    }
}

/// `g_μ` of a fixed ensemble, with the residual frozen at construction.
pub struct EnsembleField<'a, M: ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
    pub residual: Residual,
}

impl<'a, M: ModelSpec + ?Sized> EnsembleField<'a, M> {
    pub fn new(model: &'a M, data: &'a Dataset, residual: Residual) -> Self {
        Self { model, data, residual }
    }
}

impl<M: ModelSpec + ?Sized> FieldG for EnsembleField<'_, M> {
    fn d_w(&self) -> usize {
        self.model.d_w()
    }
    fn d_theta(&self) -> usize {
        self.model.d_theta()
    }
    fn g(&self, theta: &[f64]) -> Vec<f64> {
        self.residual.g(self.model, self.data, theta)
    }
    fn jacobian(&self, theta: &[f64]) -> Vec<f64> {
        self.residual.jacobian(self.model, self.data, theta)
    }
    fn jacobian_t(&self, theta: &[f64], u: &[f64]) -> Vec<f64> {
        self.residual.jacobian_t(self.model, self.data, theta, u)
    }
    fn hessian_vector(&self, theta: &[f64], u: &[f64]) -> Option<Vec<f64>> {
        self.residual.hessian_vector(self.model, self.data, theta, u)
    }
}
