use serde::{Deserialize, Serialize};

use super::field::{mean_sq_velocity, Residual};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::losses::{LossSpec, Truncation};
use crate::measure::Ensemble;
use crate::models::{check_compat, Dataset, ModelSpec};

pub const DIVERGENCE_COORD: f64 = 1e8;
pub const DIVERGENCE_ENERGY: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    pub step_size: f64,
    pub t_end: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    /// Halve the step whenever a step increases the energy.
    #[serde(default = "default_true")]
    pub halve_on_increase: bool,
    #[serde(default = "default_max_halvings")]
    pub max_halvings: usize,
}

fn default_integrator() -> Integrator {
    Integrator::Rk4
}
fn default_record_every() -> usize {
    1
}
fn default_true() -> bool {
    true
}
fn default_max_halvings() -> usize {
    12
}

impl FlowConfig {
    pub fn rk4(step_size: f64, t_end: f64) -> Self {
        Self {
            integrator: Integrator::Rk4,
            step_size,
            t_end,
            record_every: 1,
            truncation: None,
            halve_on_increase: true,
            max_halvings: default_max_halvings(),
        }
    }

    pub fn euler(step_size: f64, t_end: f64) -> Self {
        Self { integrator: Integrator::Euler, ..Self::rk4(step_size, t_end) }
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Ensemble>,
    pub energies: Vec<f64>,
    /// `((1/m) Σ |v_i|²)^{1/2}` at each recorded state.
    pub grad_norms: Vec<f64>,
    /// Trapezoidal `∫_0^t (1/m) Σ |v_i|² ds` at each recorded time.
    pub dissipation: Vec<f64>,
    pub steps: usize,
    pub final_step_size: f64,
    pub halvings: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Ensemble {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.energies.windows(2).all(|w| w[1] <= w[0] + tol)
    }

    /// `|(E_0 − E_T) − ∫|∇F_m|²| / ∫|∇F_m|²`.
    pub fn balance_error(&self) -> f64 {
        let drop = self.energies[0] - self.energies[self.energies.len() - 1];
        let diss = *self.dissipation.last().unwrap_or(&0.0);
        if diss == 0.0 {
            drop.abs()
        } else {
            (drop - diss).abs() / diss
        }
    }
}

struct Eval {
    res: Residual,
    vel: Vec<f64>,
}

struct System<'a, M: ?Sized> {
    model: &'a M,
    data: &'a Dataset,
    loss: &'a LossSpec,
    truncation: Option<&'a Truncation>,
    d_w: usize,
    d_theta: usize,
}

impl<M: ModelSpec + ?Sized> System<'_, M> {
    fn eval(&self, u: &[f64], step: usize) -> Result<Eval> {
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step, what: "particle coordinates".into() });
        }
        let ens = Ensemble::from_flat(self.d_w, self.d_theta, u.to_vec())?;
        let res = Residual::compute(&ens, self.model, self.data, self.loss, self.truncation)?;
        if !res.energy().is_finite() {
            return Err(Error::NonFinite { step, what: "energy".into() });
        }
        let vel = res.velocities(self.model, self.data, &ens);
        Ok(Eval { res, vel })
    }

    fn step(&self, integrator: Integrator, u: &[f64], k1: &[f64], h: f64, step: usize) -> Result<Vec<f64>> {
        let shifted = |k: &[f64], a: f64| -> Vec<f64> { u.iter().zip(k).map(|(x, v)| x + a * v).collect() };
        match integrator {
            Integrator::Euler => Ok(shifted(k1, h)),
            Integrator::Rk4 => {
                let k2 = self.eval(&shifted(k1, 0.5 * h), step)?.vel;
                let k3 = self.eval(&shifted(&k2, 0.5 * h), step)?.vel;
                let k4 = self.eval(&shifted(&k3, h), step)?.vel;
                Ok((0..u.len()).map(|j| u[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).collect())
            }
        }
    }
}

fn guard(u: &[f64], dim: usize, energy: f64, step: usize) -> Result<()> {
    if let Some(i) = u.chunks(dim).position(|p| norm(p) > DIVERGENCE_COORD) {
        return Err(Error::Divergence { step, what: format!("particle {i} left the ball of radius {DIVERGENCE_COORD:e}") });
    }
    if energy > DIVERGENCE_ENERGY {
        return Err(Error::Divergence { step, what: format!("energy {energy:e} exceeds {DIVERGENCE_ENERGY:e}") });
    }
    Ok(())
}

/// Integrates `u̇_i = v(u_i)` for all particles, the velocity field being
/// recomputed from the current ensemble at every stage.
pub fn run_flow<M: ModelSpec + ?Sized>(
    ens0: &Ensemble,
    model: &M,
    data: &Dataset,
    loss: &LossSpec,
    cfg: &FlowConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_compat(model, Some(ens0), Some(data))?;
    let sys = System { model, data, loss, truncation: cfg.truncation.as_ref(), d_w: ens0.d_w(), d_theta: ens0.d_theta() };
    let m = ens0.m();
    let dim = ens0.dim();

    let mut u = ens0.as_flat().to_vec();
    let mut cur = sys.eval(&u, 0)?;
    guard(&u, dim, cur.res.energy(), 0)?;
    let mut cur_gn2 = mean_sq_velocity(&cur.vel, m);

    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![ens0.clone()],
        energies: vec![cur.res.energy()],
        grad_norms: vec![cur_gn2.sqrt()],
        dissipation: vec![0.0],
        steps: 0,
        final_step_size: cfg.step_size,
        halvings: 0,
    };

    let mut h = cfg.step_size;
    let mut t = 0.0;
    // time is base_t + k·h since the last change of h, to avoid drift
    let (mut base_t, mut k) = (0.0, 0usize);
    let mut diss = 0.0;
    let mut step = 0usize;
    let eps_t = 1e-12 * cfg.t_end;
    while t < cfg.t_end - eps_t {
        step += 1;
        let dt = h.min(cfg.t_end - t);
        let next_u = sys.step(cfg.integrator, &u, &cur.vel, dt, step)?;
        let next = sys.eval(&next_u, step)?;
        let e0 = cur.res.energy();
        let e1 = next.res.energy();
        if cfg.halve_on_increase && e1 > e0 + 1e-13 * e0.abs().max(1e-300) {
            if traj.halvings >= cfg.max_halvings {
                return Err(Error::Divergence {
                    step,
                    what: format!("energy increased after {} step halvings (h = {h:e})", traj.halvings),
                });
            }
            h *= 0.5;
            traj.halvings += 1;
            base_t = t;
            k = 0;
            step -= 1;
            continue;
        }
        guard(&next_u, dim, e1, step)?;
        let gn2 = mean_sq_velocity(&next.vel, m);
        diss += 0.5 * dt * (cur_gn2 + gn2);
        k += 1;
        t = if dt < h { cfg.t_end } else { base_t + k as f64 * h };
        u = next_u;
        cur = next;
        cur_gn2 = gn2;
        let last = t >= cfg.t_end - eps_t;
        if step % cfg.record_every == 0 || last {
            traj.times.push(if last { cfg.t_end } else { t });
            traj.states.push(Ensemble::from_flat(sys.d_w, sys.d_theta, u.clone())?);
            traj.energies.push(cur.res.energy());
            traj.grad_norms.push(cur_gn2.sqrt());
            traj.dissipation.push(diss);
        }
    }
    traj.steps = step;
    traj.final_step_size = h;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{sample_ensemble, InitSpec};
    use crate::models::{predictor_mean, Activation, SigmoidNet, SyntheticSpec};

    fn setup(m: usize) -> (SigmoidNet, Dataset, Ensemble) {
        let model = SigmoidNet::new(Activation::Sigmoid, 3, 1);
        let data = SyntheticSpec::Gaussian { n_samples: 12, d_in: 3, d_out: 1, seed: 4 }.generate().unwrap();
        let ens = sample_ensemble(&InitSpec::gaussian(1, 3, 1.0, 8), m).unwrap();
        (model, data, ens)
    }

    #[test]
    fn config_validation() {
        assert!(FlowConfig::rk4(0.0, 1.0).validate().is_err());
        assert!(FlowConfig::rk4(0.1, -1.0).validate().is_err());
        assert!(FlowConfig::rk4(0.1, 1.0).with_record_every(0).validate().is_err());
    }

    #[test]
    fn zero_residual_is_stationary() {
        let (model, data, ens) = setup(5);
        let pred = predictor_mean(&ens, &model, &data).unwrap();
        let data = data.with_labels(pred, 1).unwrap();
        let traj = run_flow(&ens, &model, &data, &LossSpec::square(1), &FlowConfig::rk4(0.1, 1.0)).unwrap();
        assert!(traj.states.iter().all(|s| s == &ens));
        assert!(traj.energies.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn records_and_covers_horizon() {
        let (model, data, ens) = setup(4);
        let traj = run_flow(&ens, &model, &data, &LossSpec::square(1), &FlowConfig::rk4(0.3, 1.0).with_record_every(2)).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.6, 1.0]);
        assert_eq!(traj.steps, 4);
        assert!(traj.is_monotone(0.0));
    }

    #[test]
    fn single_particle_matches_scalar_descent() {
        // m = 1, d_in = 1, d_out = 1: u̇ = −∇_u R(σ(θx)w), integrated with a
        // hand-written RK4 on the two scalar unknowns
        let model = SigmoidNet::new(Activation::Sigmoid, 1, 1);
        let xs = [0.5, -1.0, 2.0];
        let ys = [1.0, -0.5, 0.3];
        let data = Dataset::new(xs.to_vec(), ys.to_vec(), 1, 1, None).unwrap();
        let rhs = |w: f64, th: f64| -> (f64, f64) {
            let (mut gw, mut gt) = (0.0, 0.0);
            for (x, y) in xs.iter().zip(&ys) {
                let s = 1.0 / (1.0 + (-th * x).exp());
                let r = s * w - y;
                gw += r * s;
                gt += r * w * s * (1.0 - s) * x;
            }
            (-gw / 3.0, -gt / 3.0)
        };
        let (mut w, mut th) = (0.2, -0.4);
        let h = 0.01;
        for _ in 0..300 {
            let k1 = rhs(w, th);
            let k2 = rhs(w + 0.5 * h * k1.0, th + 0.5 * h * k1.1);
            let k3 = rhs(w + 0.5 * h * k2.0, th + 0.5 * h * k2.1);
            let k4 = rhs(w + h * k3.0, th + h * k3.1);
            w += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            th += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        let ens = Ensemble::from_flat(1, 1, vec![0.2, -0.4]).unwrap();
        let traj = run_flow(&ens, &model, &data, &LossSpec::square(1), &FlowConfig::rk4(h, 3.0)).unwrap();
        let last = traj.last();
        assert!((last.w(0)[0] - w).abs() < 1e-10);
        assert!((last.theta(0)[0] - th).abs() < 1e-10);
    }

    #[test]
    fn permutation_equivariance_and_determinism() {
        let (model, data, ens) = setup(6);
        let cfg = FlowConfig::rk4(0.05, 0.5);
        let a = run_flow(&ens, &model, &data, &LossSpec::square(1), &cfg).unwrap();
        let b = run_flow(&ens, &model, &data, &LossSpec::square(1), &cfg).unwrap();
        assert_eq!(a.last(), b.last());
        let perm = [3, 1, 5, 0, 2, 4];
        let c = run_flow(&ens.permuted(&perm), &model, &data, &LossSpec::square(1), &cfg).unwrap();
        let ap = a.last().permuted(&perm);
        for (x, y) in ap.as_flat().iter().zip(c.last().as_flat()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_guard() {
        let (model, data, _) = setup(1);
        let ens = Ensemble::from_flat(1, 3, vec![2e8, 0.0, 0.0, 0.0]).unwrap();
        let err = run_flow(&ens, &model, &data, &LossSpec::square(1), &FlowConfig::euler(0.1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 0, .. }));
    }

    #[test]
    fn truncated_flow_agrees_below_level() {
        let (model, data, ens) = setup(4);
        let loss = LossSpec::square(1);
        let e0 = crate::flow::energy(&ens, &model, &data, &loss).unwrap();
        let mut cfg = FlowConfig::rk4(0.05, 1.0);
        let plain = run_flow(&ens, &model, &data, &loss, &cfg).unwrap();
        cfg.truncation = Some(Truncation::new(e0 * 1.01).unwrap());
        let trunc = run_flow(&ens, &model, &data, &loss, &cfg).unwrap();
        assert_eq!(plain.last(), trunc.last());
    }
}
