use serde::{Deserialize, Serialize};

use super::field::FieldG;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_sq};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationKind {
    None,
    /// `g_t = g + ε u`.
    ConstantOffset,
    /// `g_t = g + ε sin(ω t) u`.
    TimeOscillating {
        omega: f64,
    },
    /// Pointwise worst case for the candidate set: `g_t(θ) = g(θ) + (ε/2) u`
    /// and `J_{g_t}(θ) = J_g(θ) − (ε/2) min(1, 1/|θ|) ŵ ⊗ n̂`, with `ŵ = w/|w|`
    /// and `n̂` the unit direction of `J_g(θ)ᵀ u`. Both pieces push
    /// `⟨g(θ_t), u⟩` upward and `−⟨w, g_t⟩` downward.
    Adversarial,
}

/// A family `(g_t)` with `sup_t ‖g_t − g‖_X ≤ ε` by construction; `u` is the
/// unit direction the perturbation pushes `g` towards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationFamily {
    pub kind: PerturbationKind,
    pub epsilon: f64,
    pub direction: Vec<f64>,
}

impl PerturbationFamily {
    pub fn none(d_w: usize) -> Self {
        let mut direction = vec![0.0; d_w];
        direction[0] = 1.0;
        Self { kind: PerturbationKind::None, epsilon: 0.0, direction }
    }

    pub fn new(kind: PerturbationKind, epsilon: f64, direction: Vec<f64>) -> Result<Self> {
        let n = norm(&direction);
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        if !(n > 0.0) {
            return Err(Error::invalid("perturbation direction must be nonzero"));
        }
        Ok(Self { kind, epsilon, direction: direction.into_iter().map(|x| x / n).collect() })
    }

    /// The three nontrivial kinds at budget `epsilon` towards `direction`.
    pub fn standard_kinds(epsilon: f64, direction: &[f64]) -> Vec<Self> {
        [PerturbationKind::ConstantOffset, PerturbationKind::TimeOscillating { omega: 3.0 }, PerturbationKind::Adversarial]
            .into_iter()
            .map(|k| Self::new(k, epsilon, direction.to_vec()).expect("valid family"))
            .collect()
    }

    /// `g_t(θ)` and `J_{g_t}(θ)` at time `t` for state `(w, θ)`.
    pub fn apply(&self, g: &dyn FieldG, t: f64, w: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut val = g.g(theta);
        let mut jac = g.jacobian(theta);
        let e = self.epsilon;
        match self.kind {
            PerturbationKind::None => {}
            PerturbationKind::ConstantOffset => crate::linalg::axpy(e, &self.direction, &mut val),
            PerturbationKind::TimeOscillating { omega } => crate::linalg::axpy(e * (omega * t).sin(), &self.direction, &mut val),
            PerturbationKind::Adversarial => {
                crate::linalg::axpy(0.5 * e, &self.direction, &mut val);
                let (dw, dt) = (g.d_w(), g.d_theta());
                let n = crate::linalg::matvec_t(&jac, dw, dt, &self.direction);
                let (nn, wn) = (norm(&n), norm(w));
                if nn > 0.0 && wn > 0.0 {
                    let s = 0.5 * e * (1.0 / norm(theta)).min(1.0);
                    for k in 0..dw {
                        for j in 0..dt {
                            jac[k * dt + j] -= s * (w[k] / wn) * (n[j] / nn);
                        }
                    }
                }
            }
        }
        (val, jac)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub step_size: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl OdeConfig {
    pub fn new(step_size: f64, t_end: f64) -> Self {
        Self { step_size, t_end, record_every: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EscapeTrajectory {
    pub times: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    /// `½|w_t|²`.
    pub half_sq_norm: Vec<f64>,
    /// `d/dt ½|w_t|² = −⟨w_t, g_t(θ_t)⟩`.
    pub rate: Vec<f64>,
    /// Minimum of the rate over every integration step, recorded or not.
    pub min_rate: f64,
}

impl EscapeTrajectory {
    /// Writes `t, w_1.., theta_1.., half_sq_norm, rate` rows.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        let dw = self.w.first().map_or(0, |w| w.len());
        let dt = self.theta.first().map_or(0, |t| t.len());
        let mut head = vec!["t".to_string()];
        head.extend((1..=dw).map(|k| format!("w_{k}")));
        head.extend((1..=dt).map(|k| format!("theta_{k}")));
        head.push("half_sq_norm".into());
        head.push("rate".into());
        wr.write_record(&head)?;
        for i in 0..self.times.len() {
            let mut row = vec![self.times[i]];
            row.extend(&self.w[i]);
            row.extend(&self.theta[i]);
            row.push(self.half_sq_norm[i]);
            row.push(self.rate[i]);
            wr.write_record(row.iter().map(|x| format!("{x:.17e}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn w_norms(&self) -> Vec<f64> {
        self.w.iter().map(|w| norm(w)).collect()
    }
}

fn rhs(g: &dyn FieldG, pert: &PerturbationFamily, t: f64, w: &[f64], theta: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let (val, jac) = pert.apply(g, t, w, theta);
    let dtheta = crate::linalg::matvec_t(&jac, g.d_w(), g.d_theta(), w);
    let rate = -dot(w, &val);
    (val.into_iter().map(|x| -x).collect(), dtheta.into_iter().map(|x| -x).collect(), rate)
}

/// RK4 integration of `ẇ = −g_t(θ)`, `θ̇ = −J_{g_t}(θ)ᵀ w`.
pub fn escape_ode_run(g: &dyn FieldG, pert: &PerturbationFamily, w0: &[f64], theta0: &[f64], cfg: &OdeConfig) -> Result<EscapeTrajectory> {
    if w0.len() != g.d_w() || theta0.len() != g.d_theta() || pert.direction.len() != g.d_w() {
        return Err(Error::dim("initial condition or perturbation direction does not match the field"));
    }
    if !(cfg.step_size > 0.0 && cfg.t_end > 0.0) || cfg.record_every == 0 {
        return Err(Error::invalid("step_size and t_end must be positive, record_every >= 1"));
    }
    let n_steps = (cfg.t_end / cfg.step_size - 1e-9).ceil() as usize;
    let h = cfg.t_end / n_steps as f64;
    let mut w = w0.to_vec();
    let mut th = theta0.to_vec();
    let (_, _, r0) = rhs(g, pert, 0.0, &w, &th);
    let mut out = EscapeTrajectory {
        times: vec![0.0],
        w: vec![w.clone()],
        theta: vec![th.clone()],
        half_sq_norm: vec![0.5 * norm_sq(&w)],
        rate: vec![r0],
        min_rate: r0,
    };
    let shift = |x: &[f64], k: &[f64], a: f64| -> Vec<f64> { x.iter().zip(k).map(|(p, q)| p + a * q).collect() };
    for step in 1..=n_steps {
        let t = (step - 1) as f64 * h;
        let (k1w, k1t, _) = rhs(g, pert, t, &w, &th);
        let (k2w, k2t, _) = rhs(g, pert, t + 0.5 * h, &shift(&w, &k1w, 0.5 * h), &shift(&th, &k1t, 0.5 * h));
        let (k3w, k3t, _) = rhs(g, pert, t + 0.5 * h, &shift(&w, &k2w, 0.5 * h), &shift(&th, &k2t, 0.5 * h));
        let (k4w, k4t, _) = rhs(g, pert, t + h, &shift(&w, &k3w, h), &shift(&th, &k3t, h));
        for i in 0..w.len() {
            w[i] += h / 6.0 * (k1w[i] + 2.0 * k2w[i] + 2.0 * k3w[i] + k4w[i]);
        }
        for i in 0..th.len() {
            th[i] += h / 6.0 * (k1t[i] + 2.0 * k2t[i] + 2.0 * k3t[i] + k4t[i]);
        }
        if !w.iter().chain(&th).all(|x| x.is_finite()) {
            return Err(Error::NonFinite { step, what: "escape ODE state".into() });
        }
        let t_now = step as f64 * h;
        let (_, _, rate) = rhs(g, pert, t_now, &w, &th);
        out.min_rate = out.min_rate.min(rate);
        if step % cfg.record_every == 0 || step == n_steps {
            out.times.push(t_now);
            out.w.push(w.clone());
            out.theta.push(th.clone());
            out.half_sq_norm.push(0.5 * norm_sq(&w));
            out.rate.push(rate);
        }
    }
    Ok(out)
}
