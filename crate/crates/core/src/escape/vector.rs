//! Stable sets for vector output weights (`d_w > 1`).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::FieldG;
use super::ode::{escape_ode_run, OdeConfig, PerturbationFamily};
use super::sampling::{ball_point, boundary_points, interior_points, level_meets_sphere};
use crate::error::{Error, Result};
use crate::linalg::{dot, matvec, norm, proj_perp};
use crate::rng::{self, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CondOptions {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub sample_radius: f64,
    pub probe_radius: f64,
    /// Boundary samples with `|J Jᵀ v|` below this make the check inconclusive.
    pub degenerate_floor: f64,
    /// Pass requires `lhs + margin_guard < rhs`.
    pub margin_guard: f64,
    pub seed: u64,
}

impl Default for CondOptions {
    fn default() -> Self {
        Self {
            n_interior: 20_000,
            n_boundary: 1000,
            sample_radius: 5.0,
            probe_radius: 1e3,
            degenerate_floor: 1e-12,
            margin_guard: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondReport {
    pub eta: f64,
    pub v: Vec<f64>,
    /// `γ' = sup_{∂K} |proj_{v⊥}(J Jᵀ v)| / |J Jᵀ v|`.
    pub lhs: f64,
    /// `γ = inf_K |⟨g, v⟩| / |g|`.
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    /// First boundary sample where `|J Jᵀ v|` fell below the floor.
    pub degenerate_sample: Option<Vec<f64>>,
    pub inconclusive: bool,
    /// `(γ', γ)` when the check passes.
    pub delta_window: Option<(f64, f64)>,
    /// `inf_{∂K} |J_gᵀ v|`.
    pub beta: f64,
    pub n_interior: usize,
    pub n_boundary: usize,
    /// Largest `|θ|` among boundary samples.
    pub boundary_radius: f64,
}

/// Monte-Carlo estimate of both sides of the stability condition for
/// `K = {θ : ⟨g(θ), v⟩ ≤ −η}`.
pub fn cond_refined_check(g: &dyn FieldG, v: &[f64], eta: f64, opts: &CondOptions) -> Result<CondReport> {
    if v.len() != g.d_w() {
        return Err(Error::dim(format!("v has length {}, field has d_w = {}", v.len(), g.d_w())));
    }
    let vn = norm(v);
    if !(vn > 0.0) || !(eta > 0.0) {
        return Err(Error::invalid("v must be nonzero and eta positive"));
    }
    let v: Vec<f64> = v.iter().map(|x| x / vn).collect();
    let (dw, dt) = (g.d_w(), g.d_theta());
    let f = |th: &[f64]| dot(&g.g(th), &v) + eta;
    let inside = interior_points(&f, dt, opts.sample_radius, opts.n_interior, opts.seed ^ 0x21);
    if inside.is_empty() {
        return Err(Error::Construction("K is empty on the sample".into()));
    }
    let ratio = |th: &[f64]| -> (f64, f64, f64) {
        let jac = g.jacobian(th);
        let jtv = crate::linalg::matvec_t(&jac, dw, dt, &v);
        let jjtv = matvec(&jac, dw, dt, &jtv);
        let n = norm(&jjtv);
        (norm(&proj_perp(&jjtv, &v)) / n, n, norm(&jtv))
    };
    let align = |th: &[f64]| {
        let gv = g.g(th);
        dot(&gv, &v).abs() / norm(&gv)
    };
    let unbounded = level_meets_sphere(&f, dt, opts.probe_radius, 256, opts.seed ^ 0x23);
    let bnd = if unbounded { Vec::new() } else { boundary_points(&f, &inside, opts.n_boundary, 2.0 * opts.probe_radius, opts.seed ^ 0x25) };
    if bnd.is_empty() {
        // no usable boundary: inconclusive when J Jᵀ v degenerates on K, an error otherwise
        if let Some(p) = inside.iter().find(|p| ratio(p).1 < opts.degenerate_floor) {
            let rhs = inside.par_iter().map(|p| align(p)).reduce(|| f64::INFINITY, f64::min);
            return Ok(CondReport {
                eta,
                v,
                lhs: 0.0,
                rhs,
                margin: rhs,
                pass: false,
                degenerate_sample: Some(p.clone()),
                inconclusive: true,
                delta_window: None,
                beta: 0.0,
                n_interior: inside.len(),
                n_boundary: 0,
                boundary_radius: f64::INFINITY,
            });
        }
        let why =
            if unbounded { "K appears unbounded; the vector construction needs a bounded K" } else { "no boundary point of K located" };
        return Err(Error::Construction(why.into()));
    }
    let per: Vec<(f64, f64, f64)> = bnd.par_iter().map(|p| ratio(p)).collect();
    let degenerate = per.iter().position(|r| r.1 < opts.degenerate_floor).map(|i| bnd[i].clone());
    let lhs = per.iter().filter(|r| r.1 >= opts.degenerate_floor).map(|r| r.0).fold(0.0, f64::max);
    let beta = per.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let rhs = inside.par_iter().chain(bnd.par_iter()).map(|p| align(p)).reduce(|| f64::INFINITY, f64::min);
    let inconclusive = degenerate.is_some();
    let pass = !inconclusive && lhs + opts.margin_guard < rhs;
    Ok(CondReport {
        eta,
        v,
        lhs,
        rhs,
        margin: rhs - lhs,
        pass,
        degenerate_sample: degenerate,
        inconclusive,
        delta_window: pass.then_some((lhs, rhs)),
        beta,
        n_interior: inside.len(),
        n_boundary: bnd.len(),
        boundary_radius: bnd.iter().map(|p| norm(p)).fold(0.0, f64::max),
    })
}

/// `A = {(w, θ) : θ ∈ K, ⟨v, w⟩/|w| ≥ δ}` with `K = {⟨g, v⟩ ≤ −η}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableSetVector {
    pub v: Vec<f64>,
    pub eta: f64,
    pub delta: f64,
    /// `γ'` and `γ` from the condition check.
    pub gamma_prime: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Largest admissible perturbation size from the two proof margins.
    pub epsilon_max: f64,
    pub theta_radius: f64,
}

impl StableSetVector {
    /// Takes `δ` at the middle of the window and half the admissible `ε`.
    pub fn from_report(rep: &CondReport) -> Result<Self> {
        let (gp, ga) = rep.delta_window.ok_or_else(|| Error::Precondition("the stability condition did not pass".into()))?;
        let delta = 0.5 * (gp + ga);
        let boundary_margin = delta * (1.0 - gp * gp).sqrt() - (1.0 - delta * delta).sqrt() * gp;
        let angle_margin = (1.0 - delta * delta).sqrt() * ga - delta * (1.0 - ga * ga).max(0.0).sqrt();
        let epsilon_max = 0.5 * (rep.beta * boundary_margin).min(rep.eta * angle_margin).max(0.0);
        Ok(Self {
            v: rep.v.clone(),
            eta: rep.eta,
            delta,
            gamma_prime: gp,
            gamma: ga,
            beta: rep.beta,
            epsilon_max,
            theta_radius: 1.05 * rep.boundary_radius,
        })
    }

    pub fn in_k(&self, g: &dyn FieldG, theta: &[f64]) -> bool {
        dot(&g.g(theta), &self.v) <= -self.eta
    }

    pub fn alignment(&self, w: &[f64]) -> f64 {
        dot(&self.v, w) / norm(w)
    }

    pub fn contains(&self, g: &dyn FieldG, w: &[f64], theta: &[f64]) -> bool {
        self.in_k(g, theta) && self.alignment(w) >= self.delta
    }

    /// Lower bound on `d/dt |w_t|` inside `A` under a perturbation of size
    /// `epsilon`; equals `η δ` for fields aligned with `v`.
    pub fn norm_rate_bound(&self, epsilon: f64) -> f64 {
        let d = self.delta;
        let ga = self.gamma;
        self.eta / ga.max(1e-300) * (d * ga - ((1.0 - d * d) * (1.0 - ga * ga)).max(0.0).sqrt()) - epsilon
    }

    /// `|w| ∈ [1, 2]` at an angle to `v` uniform in `[0, arccos δ]`; `θ` by
    /// rejection in the ball of radius `theta_radius`.
    pub fn sample(&self, g: &dyn FieldG, r: &mut SimRng) -> Result<(Vec<f64>, Vec<f64>)> {
        let dw = self.v.len();
        let ang = r.random::<f64>() * self.delta.acos();
        let u = proj_perp(&rng::normal_vec(r, dw), &self.v);
        let un = norm(&u);
        let scale = 1.0 + r.random::<f64>();
        let w: Vec<f64> =
            self.v.iter().zip(&u).map(|(a, b)| scale * (ang.cos() * a + if un > 0.0 { ang.sin() * b / un } else { 0.0 })).collect();
        for _ in 0..1_000_000 {
            let th = ball_point(r, g.d_theta(), self.theta_radius);
            if self.in_k(g, &th) {
                return Ok((w, th));
            }
        }
        Err(Error::Construction("rejection sampler found no point of K".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableTrial {
    pub index: usize,
    pub outside_a_initially: bool,
    pub left_k: bool,
    pub min_alignment: f64,
    /// Minimum of `d/dt |w_t| = −⟨w_t, g_t(θ_t)⟩/|w_t|` over recorded times.
    pub min_norm_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableReport {
    pub perturbation: PerturbationFamily,
    pub delta: f64,
    pub norm_rate_bound: f64,
    pub tolerance: f64,
    pub trials: Vec<StableTrial>,
    pub exits: usize,
    pub min_alignment: f64,
    pub min_norm_rate: f64,
    pub pass: bool,
}

/// Integrates the reduced ODE from the given initial conditions and checks
/// that trajectories stay in `A` with `d/dt |w_t|` above the rate bound.
pub fn verify_stable_set_from(
    g: &dyn FieldG,
    cert: &StableSetVector,
    pert: &PerturbationFamily,
    inits: &[(Vec<f64>, Vec<f64>)],
    cfg: &OdeConfig,
    tol: f64,
) -> Result<StableReport> {
    let mut trials = inits
        .par_iter()
        .enumerate()
        .map(|(k, (w0, th0))| {
            let tr = escape_ode_run(g, pert, w0, th0, cfg)?;
            let min_alignment = tr.w.iter().map(|w| cert.alignment(w)).fold(f64::INFINITY, f64::min);
            let min_norm_rate = tr.w.iter().zip(&tr.rate).map(|(w, r)| r / norm(w)).fold(f64::INFINITY, f64::min);
            Ok(StableTrial {
                index: k,
                outside_a_initially: !cert.contains(g, w0, th0),
                left_k: tr.theta.iter().any(|th| !cert.in_k(g, th)),
                min_alignment,
                min_norm_rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    trials.sort_by_key(|t| t.index);
    let bound = cert.norm_rate_bound(pert.epsilon);
    let exits = trials.iter().filter(|t| t.left_k || t.min_alignment < cert.delta - tol).count();
    let min_alignment = trials.iter().map(|t| t.min_alignment).fold(f64::INFINITY, f64::min);
    let min_norm_rate = trials.iter().map(|t| t.min_norm_rate).fold(f64::INFINITY, f64::min);
    let pass = !trials.is_empty() && exits == 0 && trials.iter().all(|t| !t.outside_a_initially) && min_norm_rate >= bound - tol;
    Ok(StableReport {
        perturbation: pert.clone(),
        delta: cert.delta,
        norm_rate_bound: bound,
        tolerance: tol,
        trials,
        exits,
        min_alignment,
        min_norm_rate,
        pass,
    })
}

/// [`verify_stable_set_from`] with `n_trials` draws from `A` (trial `k` uses
/// substream `k` of `seed`).
pub fn verify_stable_set_vector(
    g: &dyn FieldG,
    cert: &StableSetVector,
    pert: &PerturbationFamily,
    n_trials: usize,
    cfg: &OdeConfig,
    tol: f64,
    seed: u64,
) -> Result<StableReport> {
    let inits = (0..n_trials).map(|k| cert.sample(g, &mut rng::substream(seed, k as u64))).collect::<Result<Vec<_>>>()?;
    verify_stable_set_from(g, cert, pert, &inits, cfg, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::escape::field::ClosedFormField;
    use crate::escape::ode::PerturbationKind;

    fn radial_aligned() -> ClosedFormField {
        ClosedFormField::Radial { v: vec![1.0, 0.0, 0.0], offset: 0.5, amplitude: 1.0, d_theta: 2 }
    }

    fn opts() -> CondOptions {
        CondOptions { n_interior: 4000, n_boundary: 300, seed: 5, ..Default::default() }
    }

    #[test]
    fn radial_aligned_passes() {
        let g = radial_aligned();
        let rep = cond_refined_check(&g, &[1.0, 0.0, 0.0], 1.0, &opts()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.lhs < 1e-12 && (rep.rhs - 1.0).abs() < 1e-12);
        let cert = StableSetVector::from_report(&rep).unwrap();
        assert!((cert.norm_rate_bound(0.0) - cert.eta * cert.delta).abs() < 1e-12);
        let cfg = OdeConfig::new(0.02, 5.0);
        for eps in [0.0, cert.epsilon_max] {
            let pert = PerturbationFamily::new(PerturbationKind::Adversarial, eps, vec![1.0, 0.0, 0.0]).unwrap();
            let r = verify_stable_set_vector(&g, &cert, &pert, 20, &cfg, 1e-9, 1).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn constant_aligned_is_inconclusive() {
        let g = ClosedFormField::Constant { value: vec![-1.0, 0.0], d_theta: 2 };
        let rep = cond_refined_check(&g, &[1.0, 0.0], 0.5, &opts()).unwrap();
        assert!(rep.inconclusive && !rep.pass && rep.degenerate_sample.is_some());
        assert_eq!(rep.lhs, 0.0);
        // a field with no degenerate point and no boundary is an error
        let t = ClosedFormField::Tilted { offset: 1.0, slope: 0.5, d_theta: 2 };
        assert!(cond_refined_check(&t, &[1.0], 0.5, &opts()).is_err());
    }

    #[test]
    fn rotating_field_window() {
        let g = ClosedFormField::Rotating;
        let rep = cond_refined_check(&g, &[1.0, 0.0], 0.95, &opts()).unwrap();
        assert!(rep.pass, "{rep:?}");
        // K = [−a, a] with a² = 1/η − 1; both sides are attained at θ = ±a
        let a = (1.0 / 0.95 - 1.0f64).sqrt();
        assert!((rep.rhs - 1.0 / (1.0 + a * a).sqrt()).abs() < 1e-9);
        let cert = StableSetVector::from_report(&rep).unwrap();
        assert!(cert.gamma_prime < cert.delta && cert.delta < cert.gamma && cert.epsilon_max > 0.0);
    }

    #[test]
    fn outside_a_is_flagged() {
        let g = radial_aligned();
        let rep = cond_refined_check(&g, &[1.0, 0.0, 0.0], 1.0, &opts()).unwrap();
        let cert = StableSetVector::from_report(&rep).unwrap();
        let w0 = vec![0.0, 1.0, 0.0];
        let r = verify_stable_set_from(&g, &cert, &PerturbationFamily::none(3), &[(w0, vec![0.0, 0.0])], &OdeConfig::new(0.05, 1.0), 1e-9)
            .unwrap();
        assert!(r.trials[0].outside_a_initially && !r.pass);
    }
}
