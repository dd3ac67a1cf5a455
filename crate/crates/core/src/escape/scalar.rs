//! Escape sets for scalar output weights (`d_w = 1`).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{estimate_sup_norms, AsymptoticField, FieldG, Negated};
use super::ode::{escape_ode_run, EscapeTrajectory, OdeConfig, PerturbationFamily};
use super::sampling::{ball_point, boundary_points, interior_points, level_meets_sphere, sphere_boundary_points};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, proj_perp};
use crate::rng::{self, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EscapeCase {
    Constant,
    Bounded,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalarBuildOptions {
    /// Levels `η` are tried on a uniform grid of this interval, in order.
    pub eta_search: (f64, f64),
    pub n_eta: usize,
    pub n_boundary: usize,
    pub n_interior: usize,
    /// Radius of the interior candidate cloud.
    pub sample_radius: f64,
    /// Radius of the sphere probed for unbounded level sets.
    pub probe_radius: f64,
    pub n_probe_dirs: usize,
    /// `−η` is declared regular when the sampled `min |∇g|` on the level set exceeds this.
    pub regular_floor: f64,
    /// `ε` is this fraction of the admissible bound.
    pub safety: f64,
    pub n_sup_dirs: usize,
    pub sup_radius: f64,
    pub n_sphere: usize,
    pub seed: u64,
}

impl Default for ScalarBuildOptions {
    fn default() -> Self {
        Self {
            eta_search: (0.1, 1.0),
            n_eta: 10,
            n_boundary: 1000,
            n_interior: 20_000,
            sample_radius: 10.0,
            probe_radius: 1e3,
            n_probe_dirs: 512,
            regular_floor: 1e-4,
            safety: 0.9,
            n_sup_dirs: 256,
            sup_radius: 1e4,
            n_sphere: 20_000,
            seed: 0,
        }
    }
}

/// Constants of the unbounded construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnboundedLedger {
    pub r_bar: f64,
    pub tau: f64,
    pub c: f64,
    pub alpha: f64,
    pub gamma_inf: f64,
    /// Largest `γ ≤ η/4` found with `inf |∇_𝕊 g_∞| ≥ β_∞/2` on the band.
    pub gamma_inf_prime: f64,
    pub beta_inf: f64,
    /// Sampled `inf |∇g|` on `∂K ∩ B(0, 2r̄)`.
    pub beta_2rbar: f64,
    pub grad_s_ginf_sup: f64,
    pub c_w: f64,
    pub c_theta: f64,
    pub c1: f64,
    pub c2: f64,
    /// Sampled `sup_{r ≥ r̄} sup_φ |g(rφ) − g_∞(φ)|`.
    pub value_gap: f64,
    /// Sampled `sup_{r ≥ r̄} sup_φ |r proj(∇g(rφ)) − ∇_𝕊 g_∞(φ)|`.
    pub grad_gap: f64,
}

/// An escape set `A = {s·w ≥ w_min} × K` with `K = {s·g ≤ −η}` (`s` the sign)
/// and the constants behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeSetScalar {
    pub case: EscapeCase,
    /// `+1` when built for `g`, `−1` when built for `−g` with `w` flipped.
    pub sign: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub w_min: f64,
    /// Sampled `inf_{∂K} |∇g|` (bounded case).
    pub beta: Option<f64>,
    pub g_sup: f64,
    pub grad_sup: f64,
    pub radial_grad_sup: f64,
    /// Sampled `min |∇g|` over the level set (regular-value evidence).
    pub level_min_grad: f64,
    pub n_boundary: usize,
    /// Radius of the ball `A`'s `θ`-marginal is drawn from.
    pub theta_radius: f64,
    pub unbounded: Option<UnboundedLedger>,
}

fn scalar(g: &dyn FieldG, th: &[f64]) -> f64 {
    g.g(th)[0]
}

fn grad(g: &dyn FieldG, th: &[f64]) -> Vec<f64> {
    g.jacobian(th)
}

struct NegLimit<'a>(&'a dyn AsymptoticField);

impl AsymptoticField for NegLimit<'_> {
    fn value(&self, phi: &[f64]) -> f64 {
        -self.0.value(phi)
    }
    fn grad_sphere(&self, phi: &[f64]) -> Vec<f64> {
        self.0.grad_sphere(phi).into_iter().map(|x| -x).collect()
    }
}

impl EscapeSetScalar {
    /// `θ ∈ K`.
    pub fn in_k(&self, g: &dyn FieldG, theta: &[f64]) -> bool {
        self.case == EscapeCase::Constant || self.sign * scalar(g, theta) <= -self.eta
    }

    pub fn contains(&self, g: &dyn FieldG, w: &[f64], theta: &[f64]) -> bool {
        self.sign * w[0] >= self.w_min && self.in_k(g, theta)
    }

    /// Unit direction in `R^{d_w}` the perturbations push `g` towards.
    pub fn push_direction(&self) -> Vec<f64> {
        vec![self.sign]
    }

    /// Draws `(w, θ)` from `A`: `|w| ∈ [w_min, 2 w_min]`, `θ` by rejection in
    /// the ball of radius `theta_radius`.
    pub fn sample(&self, g: &dyn FieldG, r: &mut SimRng) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = vec![self.sign * self.w_min * (1.0 + r.random::<f64>())];
        for _ in 0..1_000_000 {
            let th = ball_point(r, g.d_theta(), self.theta_radius);
            if self.in_k(g, &th) {
                return Ok((w, th));
            }
        }
        Err(Error::Construction("rejection sampler found no point of K".into()))
    }
}

/// Builds an escape set for a scalar field, trying `g` then `−g`.
pub fn build_escape_set_scalar(g: &dyn FieldG, limit: Option<&dyn AsymptoticField>, opts: &ScalarBuildOptions) -> Result<EscapeSetScalar> {
    if g.d_w() != 1 {
        return Err(Error::dim(format!("scalar construction needs d_w = 1, got {}", g.d_w())));
    }
    let sup = estimate_sup_norms(g, opts.n_sup_dirs, opts.sup_radius, opts.seed ^ 0x5u64);
    let d = g.d_theta();
    let g0 = scalar(g, &vec![0.0; d]);
    if sup.g < 1e-14 {
        return Err(Error::Construction("g is identically zero on the sample: no escape set exists".into()));
    }
    if sup.jacobian < 1e-14 {
        // constant field: A = {s·w ≥ 1} × R^{d_θ} with ε = η₀/2
        let eta0 = g0.abs();
        return Ok(EscapeSetScalar {
            case: EscapeCase::Constant,
            sign: if g0 < 0.0 { 1.0 } else { -1.0 },
            eta: eta0 / 2.0,
            epsilon: eta0 / 2.0,
            w_min: 1.0,
            beta: None,
            g_sup: sup.g,
            grad_sup: 0.0,
            radial_grad_sup: 0.0,
            level_min_grad: 0.0,
            n_boundary: 0,
            theta_radius: opts.sample_radius,
            unbounded: None,
        });
    }
    let (lo, hi) = opts.eta_search;
    if !(lo > 0.0 && hi >= lo) || opts.n_eta == 0 {
        return Err(Error::invalid(format!("eta_search must satisfy 0 < lo <= hi, got ({lo}, {hi})")));
    }
    let etas: Vec<f64> = if opts.n_eta == 1 || lo == hi {
        vec![lo]
    } else {
        (0..opts.n_eta).map(|k| lo + (hi - lo) * k as f64 / (opts.n_eta - 1) as f64).collect()
    };
    let neg = Negated(g);
    let mut evidence = Vec::new();
    for sign in [1.0, -1.0] {
        let field: &dyn FieldG = if sign > 0.0 { g } else { &neg };
        let neg_limit = limit.map(NegLimit);
        let lim: Option<&dyn AsymptoticField> = if sign > 0.0 { limit } else { neg_limit.as_ref().map(|l| l as &dyn AsymptoticField) };
        for &eta in &etas {
            match try_level(field, lim, eta, sign, &sup, opts) {
                Ok(set) => return Ok(set),
                Err(msg) => evidence.push(format!("sign {sign:+}, eta {eta:.4}: {msg}")),
            }
        }
    }
    Err(Error::Construction(format!("no regular value found in eta_search; {}", evidence.join("; "))))
}

fn try_level(
    g: &dyn FieldG,
    limit: Option<&dyn AsymptoticField>,
    eta: f64,
    sign: f64,
    sup: &super::field::SupNorms,
    opts: &ScalarBuildOptions,
) -> std::result::Result<EscapeSetScalar, String> {
    let d = g.d_theta();
    let f = |th: &[f64]| scalar(g, th) + eta;
    let inside = interior_points(&f, d, opts.sample_radius, opts.n_interior, opts.seed ^ 0x11);
    if inside.is_empty() {
        return Err("K is empty on the sample".into());
    }
    let unbounded = level_meets_sphere(&f, d, opts.probe_radius, opts.n_probe_dirs, opts.seed ^ 0x13);
    let s_max = if unbounded { 4.0 * opts.sample_radius } else { 2.0 * opts.probe_radius };
    let bnd = boundary_points(&f, &inside, opts.n_boundary, s_max, opts.seed ^ 0x17);
    if bnd.is_empty() {
        return Err("no boundary point located".into());
    }
    let grads: Vec<f64> = bnd.par_iter().map(|p| norm(&grad(g, p))).collect();
    let level_min = grads.iter().cloned().fold(f64::INFINITY, f64::min);
    if level_min <= opts.regular_floor {
        return Err(format!("sampled min |grad g| on the level set is {level_min:.3e}"));
    }
    let grad_sup = sup.jacobian.max(grads.iter().cloned().fold(0.0, f64::max));
    if !unbounded {
        let beta = level_min;
        let epsilon = opts.safety * (beta * beta / grad_sup).min(eta / 2.0);
        let radius = bnd.iter().map(|p| norm(p)).fold(0.0, f64::max);
        return Ok(EscapeSetScalar {
            case: EscapeCase::Bounded,
            sign,
            eta,
            epsilon,
            w_min: eta / (eta - epsilon),
            beta: Some(beta),
            g_sup: sup.g,
            grad_sup,
            radial_grad_sup: sup.radial_jacobian,
            level_min_grad: level_min,
            n_boundary: bnd.len(),
            theta_radius: 1.05 * radius,
            unbounded: None,
        });
    }
    let Some(lim) = limit else {
        return Err("level set is unbounded and no asymptotic field was declared".into());
    };
    let led = unbounded_ledger(g, lim, eta, sup, grad_sup, opts)?;
    let beta_small = bnd.iter().zip(&grads).filter(|(p, _)| norm(p) <= 2.0 * led.r_bar).map(|(_, &gn)| gn).fold(f64::INFINITY, f64::min);
    let mut led = led;
    led.beta_2rbar = beta_small;
    let mut bound = (led.beta_inf.powi(2) / (16.0 * led.grad_s_ginf_sup)).min(eta / 4.0).min(1.0 / led.r_bar);
    if beta_small.is_finite() {
        bound = bound.min(beta_small * beta_small / grad_sup);
    }
    let epsilon = opts.safety * bound;
    Ok(EscapeSetScalar {
        case: EscapeCase::Unbounded,
        sign,
        eta,
        epsilon,
        w_min: (led.tau * led.r_bar).max(4.0),
        beta: None,
        g_sup: sup.g,
        grad_sup,
        radial_grad_sup: sup.radial_jacobian,
        level_min_grad: level_min,
        n_boundary: bnd.len(),
        theta_radius: 4.0 * led.r_bar,
        unbounded: Some(led),
    })
}

fn unbounded_ledger(
    g: &dyn FieldG,
    lim: &dyn AsymptoticField,
    eta: f64,
    sup: &super::field::SupNorms,
    grad_sup: f64,
    opts: &ScalarBuildOptions,
) -> std::result::Result<UnboundedLedger, String> {
    let d = g.d_theta();
    if d < 2 {
        return Err("unbounded construction needs d_theta >= 2".into());
    }
    let sphere: Vec<Vec<f64>> = (0..opts.n_sphere).map(|k| rng::unit_vec(&mut rng::substream(opts.seed ^ 0x19, k as u64), d)).collect();
    let sgrad: Vec<(f64, f64)> = sphere.par_iter().map(|p| (lim.value(p), norm(&lim.grad_sphere(p)))).collect();
    let grad_s_sup = sgrad.iter().map(|x| x.1).fold(0.0, f64::max);
    let f_inf = |p: &[f64]| lim.value(p) + eta;
    let level = sphere_boundary_points(&f_inf, d, opts.n_boundary, opts.seed ^ 0x1d);
    if level.is_empty() {
        return Err("-eta is not in the sampled range of g_inf".into());
    }
    let beta_inf = level.iter().map(|p| norm(&lim.grad_sphere(p))).fold(f64::INFINITY, f64::min);
    if beta_inf <= opts.regular_floor {
        return Err(format!("-eta is not a regular value of g_inf (sampled beta_inf = {beta_inf:.3e})"));
    }
    let band_ok = |gam: f64| sgrad.iter().filter(|(v, _)| (v + eta).abs() <= gam).all(|&(_, gn)| gn >= beta_inf / 2.0);
    let cap = eta / 4.0;
    let gamma_prime = if band_ok(cap) {
        cap
    } else {
        let (mut a, mut b) = (0.0, cap);
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if band_ok(mid) {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    };
    if gamma_prime <= 0.0 {
        return Err("no positive band width around the level of g_inf".into());
    }
    let gamma_inf = gamma_prime.min(eta / 4.0);
    let c_w = sup.g + 1.0;
    let c_theta = grad_sup.max(sup.radial_jacobian);
    let k = 4.0 + c_theta;
    // largest α with 2(4+C_θ)(α + C_w α²/2) ≤ 1
    let (qa, qb, qc) = (c_w / 2.0, 1.0, -1.0 / (2.0 * k));
    let alpha = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
    let c1 = 9.0 + c_w * k * alpha * alpha;
    let c2 = 2.0 * k;
    let tau = (eta * c1 / c2).sqrt().max(1.0);
    let c = gamma_inf.min(3.0 * beta_inf * beta_inf / (32.0 * c2) * (1.0 + alpha * c2 / c1).ln());
    let tol_v = (c / 4.0).min(eta / 4.0).min(gamma_inf);
    let tol_g = (beta_inf * beta_inf / (16.0 * grad_s_sup)).min(eta / 4.0).min(1.0);
    let dirs: Vec<&Vec<f64>> = sphere.iter().step_by((sphere.len() / 256).max(1)).collect();
    let gaps = |r: f64| -> (f64, f64) {
        let mut radii = Vec::new();
        let mut rr = r;
        while rr <= r * 1e3 {
            radii.push(rr);
            rr *= 1.5;
        }
        dirs.par_iter()
            .map(|phi| {
                let mut out = (0.0f64, 0.0f64);
                for &rr in &radii {
                    let th: Vec<f64> = phi.iter().map(|x| rr * x).collect();
                    out.0 = out.0.max((scalar(g, &th) - lim.value(phi)).abs());
                    let pg: Vec<f64> = proj_perp(&grad(g, &th), phi).into_iter().map(|x| rr * x).collect();
                    let gs = lim.grad_sphere(phi);
                    out.1 = out.1.max(norm(&crate::linalg::sub(&pg, &gs)));
                }
                out
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
    };
    let mut r = 1.0;
    while r <= 1e6 {
        let (gv, gg) = gaps(r);
        if gv <= tol_v && gg <= tol_g {
            return Ok(UnboundedLedger {
                r_bar: r,
                tau,
                c,
                alpha,
                gamma_inf,
                gamma_inf_prime: gamma_prime,
                beta_inf,
                beta_2rbar: f64::INFINITY,
                grad_s_ginf_sup: grad_s_sup,
                c_w,
                c_theta,
                c1,
                c2,
                value_gap: gv,
                grad_gap: gg,
            });
        }
        r *= 1.25;
    }
    let _ = dot;
    Err("uniform convergence to g_inf not reached below r = 1e6".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeTrial {
    pub index: usize,
    pub min_rate: f64,
    pub final_w_norm: f64,
    /// Slope of the least-squares line through `|w_t|`.
    pub slope: f64,
    /// `max_t ||w_t| − fit(t)|` over the growth `fit(T) − fit(0)`.
    pub linear_deviation: f64,
    /// Some recorded `θ_t` left the set `K` (bounded and constant cases).
    pub left_k: bool,
    pub max_g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub perturbation: PerturbationFamily,
    pub eta: f64,
    pub tolerance: f64,
    pub trials: Vec<EscapeTrial>,
    pub min_rate: f64,
    pub max_linear_deviation: f64,
    pub pass: bool,
}

/// Least-squares line through `(t, y)`; returns `(intercept, slope)`.
pub fn linear_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mt, b)
}

fn trial_summary(index: usize, tr: &EscapeTrajectory, g: &dyn FieldG, in_k: &(dyn Fn(&[f64]) -> bool + Sync)) -> EscapeTrial {
    let wn = tr.w_norms();
    let (a, b) = linear_fit(&tr.times, &wn);
    let t_end = *tr.times.last().unwrap();
    let growth = (b * t_end).abs().max(1e-300);
    let dev = tr.times.iter().zip(&wn).map(|(t, w)| (w - a - b * t).abs()).fold(0.0, f64::max) / growth;
    EscapeTrial {
        index,
        min_rate: tr.min_rate,
        final_w_norm: *wn.last().unwrap(),
        slope: b,
        linear_deviation: dev,
        left_k: tr.theta.iter().any(|th| !in_k(th)),
        max_g: tr.theta.iter().map(|th| g.g(th)[0]).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Integrates the reduced ODE from `n_trials` draws of `sampler` (trial `k`
/// uses substream `k` of `seed`) and checks `d/dt ½|w_t|² ≥ η − tol`.
#[allow(clippy::too_many_arguments)]
pub fn verify_escape_rate(
    g: &dyn FieldG,
    pert: &PerturbationFamily,
    sampler: &(dyn Fn(&mut SimRng) -> (Vec<f64>, Vec<f64>) + Sync),
    in_k: &(dyn Fn(&[f64]) -> bool + Sync),
    eta: f64,
    cfg: &OdeConfig,
    n_trials: usize,
    tol: f64,
    seed: u64,
) -> Result<EscapeReport> {
    let mut trials = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::substream(seed, k as u64);
            let (w0, th0) = sampler(&mut r);
            let tr = escape_ode_run(g, pert, &w0, &th0, cfg)?;
            Ok(trial_summary(k, &tr, g, in_k))
        })
        .collect::<Result<Vec<_>>>()?;
    trials.sort_by_key(|t| t.index);
    let min_rate = trials.iter().map(|t| t.min_rate).fold(f64::INFINITY, f64::min);
    let max_dev = trials.iter().map(|t| t.linear_deviation).fold(0.0, f64::max);
    Ok(EscapeReport {
        perturbation: pert.clone(),
        eta,
        tolerance: tol,
        pass: !trials.is_empty() && min_rate >= eta - tol,
        trials,
        min_rate,
        max_linear_deviation: max_dev,
    })
}

impl EscapeSetScalar {
    /// Runs [`verify_escape_rate`] from `A` for each perturbation family.
    pub fn verify(
        &self,
        g: &dyn FieldG,
        families: &[PerturbationFamily],
        cfg: &OdeConfig,
        n_trials: usize,
        tol: f64,
        seed: u64,
    ) -> Result<Vec<EscapeReport>> {
        let sampler = |r: &mut SimRng| self.sample(g, r).expect("A is nonempty");
        let in_k = |th: &[f64]| self.case != EscapeCase::Bounded || self.in_k(g, th);
        self.sample(g, &mut rng::seeded(seed))?;
        families
            .iter()
            .enumerate()
            .map(|(i, p)| verify_escape_rate(g, p, &sampler, &in_k, self.eta, cfg, n_trials, tol, seed.wrapping_add(i as u64)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Small,
    Medium,
    Large,
}

pub fn regime(theta: &[f64], r_bar: f64) -> Regime {
    let r = norm(theta);
    if r < 2.0 * r_bar {
        Regime::Small
    } else if r <= 3.0 * r_bar {
        Regime::Medium
    } else {
        Regime::Large
    }
}

/// A stretch of a trajectory outside `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub t_exit: f64,
    pub regime_at_exit: Regime,
    pub t_reentry: Option<f64>,
    /// `s·g(θ_{t₁})` at re-entry.
    pub g_at_reentry: Option<f64>,
    /// `max s·g(θ_t)` over the excursion.
    pub max_g: f64,
    /// `max_g ≤ −η/2` and, when it re-enters, `g(θ_{t₁}) < −η`.
    pub ok: bool,
}

/// Exits from and re-entries into `K` along a recorded trajectory.
pub fn excursions(set: &EscapeSetScalar, g: &dyn FieldG, tr: &EscapeTrajectory) -> Vec<Excursion> {
    let r_bar = set.unbounded.as_ref().map_or(f64::INFINITY, |u| u.r_bar);
    let vals: Vec<f64> = tr.theta.iter().map(|th| set.sign * g.g(th)[0]).collect();
    let mut out: Vec<Excursion> = Vec::new();
    let mut open: Option<Excursion> = None;
    for (i, &v) in vals.iter().enumerate() {
        match open.as_mut() {
            None if v > -set.eta => {
                open = Some(Excursion {
                    t_exit: tr.times[i],
                    regime_at_exit: regime(&tr.theta[i], r_bar),
                    t_reentry: None,
                    g_at_reentry: None,
                    max_g: v,
                    ok: false,
                })
            }
            Some(e) => {
                e.max_g = e.max_g.max(v);
                if v < -set.eta {
                    e.t_reentry = Some(tr.times[i]);
                    e.g_at_reentry = Some(v);
                    e.ok = e.max_g <= -set.eta / 2.0;
                    out.push(open.take().unwrap());
                }
            }
            None => {}
        }
    }
    if let Some(mut e) = open {
        e.ok = e.max_g <= -set.eta / 2.0;
        out.push(e);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::escape::field::{ClosedFormField, TiltedLimit};

    fn radial() -> ClosedFormField {
        ClosedFormField::radial_scalar(2)
    }

    fn opts(eta: f64) -> ScalarBuildOptions {
        ScalarBuildOptions { eta_search: (eta, eta), n_eta: 1, n_interior: 4000, n_sup_dirs: 64, seed: 3, ..Default::default() }
    }

    #[test]
    fn radial_bounded_ledger() {
        let g = radial();
        let set = build_escape_set_scalar(&g, None, &opts(1.0)).unwrap();
        assert_eq!(set.case, EscapeCase::Bounded);
        assert_eq!(set.sign, 1.0);
        // ∂K = unit sphere, |∇g| = 2r/(1+r²)² = 1/2 there
        assert!((set.beta.unwrap() - 0.5).abs() < 1e-8);
        assert!((set.grad_sup - 3.0 * 3f64.sqrt() / 8.0).abs() < 1e-3);
        assert!(set.epsilon < 0.25 / set.grad_sup && set.epsilon < 0.5);
        assert!((set.theta_radius - 1.05).abs() < 1e-6);
        let mut r = rng::seeded(1);
        for _ in 0..100 {
            let (w, th) = set.sample(&g, &mut r).unwrap();
            assert!(set.contains(&g, &w, &th));
        }
    }

    #[test]
    fn zero_and_constant_fields() {
        let z = ClosedFormField::zero(1, 2);
        assert!(matches!(build_escape_set_scalar(&z, None, &opts(1.0)), Err(Error::Construction(_))));
        let c = ClosedFormField::Constant { value: vec![-0.8], d_theta: 2 };
        let set = build_escape_set_scalar(&c, None, &opts(1.0)).unwrap();
        assert_eq!(set.case, EscapeCase::Constant);
        assert!((set.epsilon - 0.4).abs() < 1e-15 && (set.eta - 0.4).abs() < 1e-15);
        let rep = set
            .verify(&c, &PerturbationFamily::standard_kinds(set.epsilon, &set.push_direction()), &OdeConfig::new(0.05, 5.0), 10, 1e-9, 1)
            .unwrap();
        assert!(rep.iter().all(|r| r.pass));
    }

    #[test]
    fn positive_field_flips_sign() {
        let g = ClosedFormField::Radial { v: vec![-1.0], offset: 0.5, amplitude: 1.0, d_theta: 2 };
        let set = build_escape_set_scalar(&g, None, &opts(1.0)).unwrap();
        assert_eq!(set.sign, -1.0);
        let rep = set
            .verify(&g, &PerturbationFamily::standard_kinds(set.epsilon, &set.push_direction()), &OdeConfig::new(0.05, 3.0), 10, 1e-6, 2)
            .unwrap();
        assert!(rep.iter().all(|r| r.pass && r.trials.iter().all(|t| !t.left_k)));
    }

    #[test]
    fn zero_rate_fails() {
        let z = ClosedFormField::zero(1, 2);
        let rep = verify_escape_rate(
            &z,
            &PerturbationFamily::none(1),
            &|_r: &mut SimRng| (vec![1.0], vec![0.0, 0.0]),
            &|_: &[f64]| true,
            0.1,
            &OdeConfig::new(0.1, 1.0),
            4,
            1e-6,
            0,
        )
        .unwrap();
        assert!(!rep.pass && rep.min_rate == 0.0);
    }

    #[test]
    fn singular_level_is_rejected() {
        // the level −1.5 is the minimum of the radial field: |∇g| vanishes there
        let g = radial();
        let mut o = opts(1.5 - 1e-9);
        o.n_interior = 2000;
        assert!(build_escape_set_scalar(&g, None, &o).is_err());
    }

    #[test]
    fn tilted_unbounded_ledger() {
        let g = ClosedFormField::Tilted { offset: 1.0, slope: 0.5, d_theta: 2 };
        let lim = TiltedLimit { offset: 1.0, slope: 0.5 };
        let mut o = opts(1.0);
        o.n_sphere = 4000;
        o.n_boundary = 300;
        let set = build_escape_set_scalar(&g, Some(&lim), &o).unwrap();
        assert_eq!(set.case, EscapeCase::Unbounded);
        let u = set.unbounded.as_ref().unwrap();
        assert!((u.beta_inf - 0.5).abs() < 1e-6);
        assert!((u.gamma_inf - 0.25).abs() < 1e-12);
        assert!(2.0 * (4.0 + u.c_theta) * (u.alpha + u.c_w * u.alpha * u.alpha / 2.0) <= 1.0 + 1e-12);
        assert!((u.tau - (1.0f64 * u.c1 / u.c2).sqrt().max(1.0)).abs() < 1e-12);
        assert!(u.value_gap <= u.c / 4.0 && set.epsilon <= 1.0 / u.r_bar);
        assert!(set.w_min >= u.tau * u.r_bar);
        // missing limit is a construction error
        assert!(build_escape_set_scalar(&g, None, &o).is_err());
    }
}
