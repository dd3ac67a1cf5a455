use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::losses::{LossSpec, Truncation};
use crate::measure::{Ensemble, Particle};
use crate::models::{check_compat, predictor_mean_unchecked, Dataset, ModelSpec};

/// The mean-field residual `R′(∫Φ dμ̂)` of a fixed ensemble, as an
/// `N × d_out` array, together with the risk it was computed from.
///
/// Under a truncation the residual is pre-multiplied by `ξ′(R)`, so every
/// downstream quantity is the differential of `ξ ∘ R`.
#[derive(Clone, Debug)]
pub struct Residual {
    values: Vec<f64>,
    risk: f64,
    energy: f64,
    d_out: usize,
}

impl Residual {
    pub fn compute<M: ModelSpec + ?Sized>(
        ens: &Ensemble,
        model: &M,
        data: &Dataset,
        loss: &LossSpec,
        truncation: Option<&Truncation>,
    ) -> Result<Self> {
        check_compat(model, Some(ens), Some(data))?;
        if loss.d_out != model.d_out() {
            return Err(Error::dim(format!("loss d_out {} vs model d_out {}", loss.d_out, model.d_out())));
        }
        let pred = predictor_mean_unchecked(ens, model, data);
        Self::from_predictions(&pred, data, loss, truncation)
    }

    pub fn from_predictions(pred: &[f64], data: &Dataset, loss: &LossSpec, truncation: Option<&Truncation>) -> Result<Self> {
        let risk = loss.risk(pred, data.labels())?;
        let mut values = loss.risk_residual(pred, data.labels())?;
        let energy = match truncation {
            Some(t) => {
                let k = t.xi_prime(risk);
                values.iter_mut().for_each(|v| *v *= k);
                t.xi(risk)
            }
            None => risk,
        };
        Ok(Self { values, risk, energy, d_out: loss.d_out })
    }

    /// A residual array supplied directly (used for frozen fields).
    pub fn from_values(values: Vec<f64>, d_out: usize) -> Result<Self> {
        if d_out == 0 || values.len() % d_out != 0 {
            return Err(Error::dim("residual length is not a multiple of d_out"));
        }
        Ok(Self { values, risk: f64::NAN, energy: f64::NAN, d_out })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.values[s * self.d_out..(s + 1) * self.d_out]
    }

    pub fn risk(&self) -> f64 {
        self.risk
    }

    /// `F_m` (or `ξ(F_m)` under truncation).
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `g_μ(θ) = φ(θ)* R′`.
    pub fn g<M: ModelSpec + ?Sized>(&self, model: &M, data: &Dataset, theta: &[f64]) -> Vec<f64> {
        model.phi_adjoint(theta, data, &self.values)
    }

    /// `J_g(θ)ᵀ w = ∇_θ ⟨g_μ(θ), w⟩`.
    pub fn jacobian_t<M: ModelSpec + ?Sized>(&self, model: &M, data: &Dataset, theta: &[f64], w: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; theta.len()];
        let inv = 1.0 / data.len() as f64;
        for s in 0..data.len() {
            crate::linalg::axpy(inv, &model.grad_theta(theta, w, data.input(s), self.sample(s)), &mut acc);
        }
        acc
    }

    /// Row-major `d_w × d_θ` Jacobian of `g_μ`, assembled row by row.
    pub fn jacobian<M: ModelSpec + ?Sized>(&self, model: &M, data: &Dataset, theta: &[f64]) -> Vec<f64> {
        let (d_w, d_t) = (model.d_w(), model.d_theta());
        let mut out = vec![0.0; d_w * d_t];
        let mut e = vec![0.0; d_w];
        for k in 0..d_w {
            e[k] = 1.0;
            out[k * d_t..(k + 1) * d_t].copy_from_slice(&self.jacobian_t(model, data, theta, &e));
            e[k] = 0.0;
        }
        out
    }

    /// `H_g(θ)[u] = ∇²_θ ⟨g_μ(θ), u⟩` when the model has a closed-form Hessian.
    pub fn hessian_vector<M: ModelSpec + ?Sized>(&self, model: &M, data: &Dataset, theta: &[f64], u: &[f64]) -> Option<Vec<f64>> {
        let d_t = model.d_theta();
        let mut acc = vec![0.0; d_t * d_t];
        let inv = 1.0 / data.len() as f64;
        for s in 0..data.len() {
            let h = model.hess_theta(theta, u, data.input(s), self.sample(s))?;
            crate::linalg::axpy(inv, &h, &mut acc);
        }
        Some(acc)
    }

    /// `v(w, θ) = (−g_μ(θ), −J_g(θ)ᵀ w)` written into `out` (length `d_w + d_θ`).
    pub fn velocity_into<M: ModelSpec + ?Sized>(&self, model: &M, data: &Dataset, w: &[f64], theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (acc_w, acc_t) = out.split_at_mut(w.len());
        let scale = -1.0 / data.len() as f64;
        for s in 0..data.len() {
            model.accumulate_pullback(theta, w, data.input(s), self.sample(s), scale, acc_w, acc_t);
        }
    }

    /// Velocities of every particle, flat in the ensemble layout.
    pub fn velocities<M: ModelSpec + ?Sized>(&self, model: &M, data: &Dataset, ens: &Ensemble) -> Vec<f64> {
        let dim = ens.dim();
        let d_w = ens.d_w();
        let mut out = vec![0.0; ens.as_flat().len()];
        out.par_chunks_mut(dim).zip(ens.as_flat().par_chunks(dim)).for_each(|(o, u)| {
            self.velocity_into(model, data, &u[..d_w], &u[d_w..], o);
        });
        out
    }
}

/// `(1/m) Σ_i |v_i|²`, which equals `−dF_m/dt` along the flow.
pub fn mean_sq_velocity(vel: &[f64], m: usize) -> f64 {
    let sq: Vec<f64> = vel.iter().map(|v| v * v).collect();
    pairwise_sum(&sq) / m as f64
}

/// `F_m(ens) = R(∫Φ dμ̂)`.
pub fn energy<M: ModelSpec + ?Sized>(ens: &Ensemble, model: &M, data: &Dataset, loss: &LossSpec) -> Result<f64> {
    Ok(Residual::compute(ens, model, data, loss, None)?.risk())
}

pub fn g_mu<M: ModelSpec + ?Sized>(ens: &Ensemble, model: &M, data: &Dataset, loss: &LossSpec, theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != model.d_theta() {
        return Err(Error::dim("theta length"));
    }
    Ok(Residual::compute(ens, model, data, loss, None)?.g(model, data, theta))
}

/// `F′(μ)(w, θ) = ⟨g_μ(θ), w⟩`.
pub fn first_variation<M: ModelSpec + ?Sized>(
    ens: &Ensemble,
    model: &M,
    data: &Dataset,
    loss: &LossSpec,
    w: &[f64],
    theta: &[f64],
) -> Result<f64> {
    if w.len() != model.d_w() {
        return Err(Error::dim("w length"));
    }
    Ok(crate::linalg::dot(&g_mu(ens, model, data, loss, theta)?, w))
}

pub fn velocity<M: ModelSpec + ?Sized>(
    ens: &Ensemble,
    model: &M,
    data: &Dataset,
    loss: &LossSpec,
    particle: &Particle,
) -> Result<Particle> {
    if particle.w.len() != model.d_w() || particle.theta.len() != model.d_theta() {
        return Err(Error::dim("particle does not match the model"));
    }
    let res = Residual::compute(ens, model, data, loss, None)?;
    let mut out = vec![0.0; model.d_w() + model.d_theta()];
    res.velocity_into(model, data, &particle.w, &particle.theta, &mut out);
    Ok(Particle::from_slice(&out, model.d_w()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{sample_ensemble, InitSpec};
    use crate::models::{sigmoid, Activation, AttentionHead, Model, SigmoidNet, SyntheticSpec};

    fn sigmoid_setup() -> (Model, Dataset, Ensemble, LossSpec) {
        let model = Model::Sigmoid(SigmoidNet::new(Activation::Sigmoid, 3, 2));
        let data = SyntheticSpec::Gaussian { n_samples: 15, d_in: 3, d_out: 2, seed: 2 }.generate().unwrap();
        let ens = sample_ensemble(&InitSpec::gaussian(2, 3, 1.0, 9), 6).unwrap();
        (model, data, ens, LossSpec::square(2))
    }

    #[test]
    fn single_sample_closed_form() {
        let model = SigmoidNet::new(Activation::Sigmoid, 2, 1);
        let x = [0.7, -1.2];
        let y = [1.5];
        let data = Dataset::new(x.to_vec(), y.to_vec(), 2, 1, None).unwrap();
        // w = 0 gives identically zero predictions
        let ens = Ensemble::from_flat(1, 2, vec![0.0, 0.3, 0.4]).unwrap();
        let theta = [0.2, -0.5];
        let g = g_mu(&ens, &model, &data, &LossSpec::square(1), &theta).unwrap();
        let expect = -sigmoid(0.2 * 0.7 + 0.5 * 1.2) * 1.5;
        assert!((g[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_gives_zero_velocity() {
        let (model, data, ens, loss) = sigmoid_setup();
        let pred = predictor_mean_unchecked(&ens, &model, &data);
        let data = data.with_labels(pred, 2).unwrap();
        let res = Residual::compute(&ens, &model, &data, &loss, None).unwrap();
        assert!(res.is_zero());
        assert!(res.velocities(&model, &data, &ens).iter().all(|&v| v == 0.0));
        assert_eq!(first_variation(&ens, &model, &data, &loss, &[1.0, 2.0], &[0.1, 0.2, 0.3]).unwrap(), 0.0);
    }

    #[test]
    fn first_variation_is_directional_derivative() {
        // adding mass ε at (w, θ): μ_ε = (1−ε)μ + εδ_{(w,θ)}; d/dε R at 0 equals
        // F′(μ)(w,θ) − ∫F′(μ)dμ
        let (model, data, ens, loss) = sigmoid_setup();
        let w = [0.4, -0.9];
        let theta = [1.0, 0.3, -0.2];
        let pred0 = predictor_mean_unchecked(&ens, &model, &data);
        let one = Ensemble::from_flat(2, 3, [w.to_vec(), theta.to_vec()].concat()).unwrap();
        let pred1 = predictor_mean_unchecked(&one, &model, &data);
        let risk_at = |e: f64| {
            let p: Vec<f64> = pred0.iter().zip(&pred1).map(|(a, b)| (1.0 - e) * a + e * b).collect();
            loss.risk(&p, data.labels()).unwrap()
        };
        let h = 1e-6;
        let fd = (risk_at(h) - risk_at(-h)) / (2.0 * h);
        let mean_fv: f64 = (0..ens.m()).map(|i| first_variation(&ens, &model, &data, &loss, ens.w(i), ens.theta(i)).unwrap()).sum::<f64>()
            / ens.m() as f64;
        let fv = first_variation(&ens, &model, &data, &loss, &w, &theta).unwrap();
        assert!((fd - (fv - mean_fv)).abs() < 1e-7, "{fd} vs {}", fv - mean_fv);
    }

    #[test]
    fn first_variation_linear_in_w() {
        let (model, data, ens, loss) = sigmoid_setup();
        let th = [0.3, 0.1, -0.4];
        let a = first_variation(&ens, &model, &data, &loss, &[1.0, 0.0], &th).unwrap();
        let b = first_variation(&ens, &model, &data, &loss, &[0.0, 1.0], &th).unwrap();
        let c = first_variation(&ens, &model, &data, &loss, &[2.0, -3.0], &th).unwrap();
        assert!((c - (2.0 * a - 3.0 * b)).abs() < 1e-13);
        assert_eq!(first_variation(&ens, &model, &data, &loss, &[0.0, 0.0], &th).unwrap(), 0.0);
    }

    fn check_velocity_fd(model: &Model, data: &Dataset, ens: &Ensemble, loss: &LossSpec) {
        let m = ens.m() as f64;
        let res = Residual::compute(ens, model, data, loss, None).unwrap();
        let vel = res.velocities(model, data, ens);
        let h = 1e-6;
        for i in 0..ens.m() {
            for k in 0..ens.dim() {
                let mut p = ens.as_flat().to_vec();
                let mut q = p.clone();
                p[i * ens.dim() + k] += h;
                q[i * ens.dim() + k] -= h;
                let fp = energy(&Ensemble::from_flat(ens.d_w(), ens.d_theta(), p).unwrap(), model, data, loss).unwrap();
                let fq = energy(&Ensemble::from_flat(ens.d_w(), ens.d_theta(), q).unwrap(), model, data, loss).unwrap();
                let fd = -m * (fp - fq) / (2.0 * h);
                let v = vel[i * ens.dim() + k];
                assert!((fd - v).abs() <= 1e-5 * v.abs().max(1e-2), "particle {i} coord {k}: {fd} vs {v}");
            }
        }
    }

    #[test]
    fn velocity_matches_energy_gradient() {
        let (model, data, ens, loss) = sigmoid_setup();
        check_velocity_fd(&model, &data, &ens, &loss);
        let head = AttentionHead::new(2, 3, 2);
        let model = Model::Attention(head);
        let data = SyntheticSpec::AttentionTeacher { n_samples: 8, d: 2, n_tokens: 3, k: 2, width: 2, teacher_scale: 1.0, seed: 3 }
            .generate()
            .unwrap();
        let ens = sample_ensemble(&InitSpec::gaussian(4, 4, 1.0, 5), 4).unwrap();
        check_velocity_fd(&model, &data, &ens, &LossSpec::square(2));
    }

    #[test]
    fn velocity_w_block_is_minus_g() {
        let (model, data, ens, loss) = sigmoid_setup();
        let p = Particle::new(vec![0.2, 0.1], vec![0.5, -0.5, 1.0]);
        let v = velocity(&ens, &model, &data, &loss, &p).unwrap();
        let g = g_mu(&ens, &model, &data, &loss, &p.theta).unwrap();
        for (a, b) in v.w.iter().zip(&g) {
            assert!((a + b).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (model, data, ens, loss) = sigmoid_setup();
        let res = Residual::compute(&ens, &model, &data, &loss, None).unwrap();
        let th = vec![0.3, -0.7, 0.2];
        let j = res.jacobian(&model, &data, &th);
        let h = 1e-6;
        for c in 0..3 {
            let mut p = th.clone();
            let mut q = th.clone();
            p[c] += h;
            q[c] -= h;
            let gp = res.g(&model, &data, &p);
            let gq = res.g(&model, &data, &q);
            for k in 0..2 {
                let fd = (gp[k] - gq[k]) / (2.0 * h);
                assert!((fd - j[k * 3 + c]).abs() < 1e-8);
            }
        }
        let u = [0.6, -1.1];
        let hv = res.hessian_vector(&model, &data, &th, &u).unwrap();
        for c in 0..3 {
            let mut p = th.clone();
            let mut q = th.clone();
            p[c] += h;
            q[c] -= h;
            let jp = res.jacobian_t(&model, &data, &p, &u);
            let jq = res.jacobian_t(&model, &data, &q, &u);
            for r in 0..3 {
                assert!(((jp[r] - jq[r]) / (2.0 * h) - hv[r * 3 + c]).abs() < 1e-7);
            }
        }
    }
}
