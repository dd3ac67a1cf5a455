use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use meanfield::asymptotics::{
    hardmax_convergence_scan, sigmoid_gradient_limit_check, sigmoid_halfspace_check, write_gnuplot, write_json, SphereSampler,
};
use meanfield::escape::{
    analyze_maximizer, build_escape_set_scalar, cond_refined_check, escape_ode_run, verify_stable_set_vector, AsymptoticField,
    ClosedFormField, PerturbationFamily, StableSetVector, TiltedLimit,
};
use meanfield::flow::{persist, run_flow, stability_experiment};
use meanfield::measure::{sample_ensemble, w2_selftest};
use meanfield::rng;

use crate::config::*;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_INVALID: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_FAIL: u8 = 4;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Not a verification experiment.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub started_unix: u64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    /// Resolved config with every default spelled out.
    pub config: ExperimentConfig,
    pub verdict: Verdict,
    pub summary: serde_json::Value,
    pub files: Vec<String>,
    /// Everything that may differ between identical reruns lives here.
    pub run: RunInfo,
}

impl Manifest {
    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let p = dir.join(MANIFEST);
        let text = fs::read_to_string(&p).with_context(|| format!("missing manifest {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("corrupt manifest {}", p.display()))
    }
}

pub struct Outcome {
    pub verdict: Verdict,
    pub summary: serde_json::Value,
}

/// Maps an error to an exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use meanfield::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Divergence { .. } | E::NonFinite { .. } => EXIT_DIVERGED,
                E::Construction(_) => EXIT_ERROR,
                _ => EXIT_INVALID,
            };
        }
    }
    EXIT_INVALID
}

pub fn verdict_code(v: Verdict) -> u8 {
    if v == Verdict::Fail {
        EXIT_FAIL
    } else {
        EXIT_OK
    }
}

/// Runs the config at `path`; `seed` and `output` override the file.
pub fn run_config_file(path: &Path, seed: Option<u64>, output: Option<PathBuf>) -> anyhow::Result<(Manifest, PathBuf)> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if output.is_some() {
        cfg.output = output;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    run_experiment(cfg, &base)
}

pub fn run_experiment(mut cfg: ExperimentConfig, base: &Path) -> anyhow::Result<(Manifest, PathBuf)> {
    cfg.resolve_seeds();
    cfg.validate()?;
    absolutize_data(&mut cfg, base)?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()));
    cfg.output = Some(dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);

    let outcome = execute(&cfg, &dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let manifest = Manifest {
        tool: "meanfield".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: cfg.experiment.name().into(),
        files: inventory(&dir)?,
        config: cfg,
        verdict: outcome.verdict,
        summary: outcome.summary,
        run: RunInfo { started_unix, threads: rayon::current_num_threads() },
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok((manifest, dir))
}

fn absolutize_data(cfg: &mut ExperimentConfig, base: &Path) -> anyhow::Result<()> {
    let data = match &mut cfg.experiment {
        Experiment::Simulate(p) => &mut p.data,
        Experiment::Stability(p) => &mut p.data,
        Experiment::HardmaxScan(p) => &mut p.data,
        _ => return Ok(()),
    };
    if let Some(p) = data.path.as_mut() {
        let full = if p.is_absolute() { p.clone() } else { base.join(&*p) };
        *p = full.canonicalize().with_context(|| format!("unreadable dataset {}", full.display()))?;
    }
    Ok(())
}

/// Output files relative to `dir`, sorted, manifest excluded.
pub fn inventory(dir: &Path) -> anyhow::Result<Vec<String>> {
    fn walk(root: &Path, d: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
        for e in fs::read_dir(d)? {
            let p = e?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else if let Ok(rel) = p.strip_prefix(root) {
                let s = rel.to_string_lossy().replace('\\', "/");
                if s != MANIFEST {
                    out.push(s);
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

fn sha256_file(p: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(p)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn data_summary(src: &DataSource, data: &meanfield::models::Dataset) -> anyhow::Result<serde_json::Value> {
    let sha = src.path.as_deref().map(sha256_file).transpose()?;
    Ok(json!({
        "n_samples": data.len(),
        "d_in": data.d_in(),
        "d_out": data.d_out(),
        "sha256": sha,
    }))
}

fn execute(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<Outcome> {
    let seed = cfg.seed;
    match &cfg.experiment {
        Experiment::Simulate(p) => {
            let data = p.data.load(Path::new(""))?;
            let ens0 = sample_ensemble(&p.init, p.m)?;
            let traj = run_flow(&ens0, &p.model, &data, &p.loss, &p.flow)?;
            persist::save_trajectory(dir, &traj, &json!({}))?;
            fs::remove_file(dir.join(MANIFEST))?;
            let monotone = traj.is_monotone(0.0);
            Ok(Outcome {
                verdict: Verdict::None,
                summary: json!({
                    "data": data_summary(&p.data, &data)?,
                    "m": p.m,
                    "energy_initial": traj.energies[0],
                    "energy_final": traj.energies[traj.energies.len() - 1],
                    "monotone": monotone,
                    "balance_error": traj.balance_error(),
                    "steps": traj.steps,
                    "halvings": traj.halvings,
                    "final_step_size": traj.final_step_size,
                    "records": traj.times.len(),
                }),
            })
        }
        Experiment::Stability(p) => {
            let data = p.data.load(Path::new(""))?;
            let rep = stability_experiment(&p.init, p.m_small, p.m_large, &p.model, &data, &p.loss, &p.flow)?;
            write_json(&dir.join("stability.json"), &rep)?;
            let mut w = csv::Writer::from_path(dir.join("stability.csv"))?;
            for r in &rep.rows {
                w.serialize(r)?;
            }
            w.flush()?;
            let holds = rep.all_hold();
            Ok(Outcome {
                verdict: if holds { Verdict::Pass } else { Verdict::Fail },
                summary: json!({
                    "data": data_summary(&p.data, &data)?,
                    "c_hat": rep.rate,
                    "rate_ls": rep.rate_ls,
                    "envelope_rate": rep.envelope_rate,
                    "exact_w2": rep.exact,
                    "all_hold": holds,
                    "rows": rep.rows,
                }),
            })
        }
        Experiment::EscapeScalar(p) => escape_scalar(p, seed, dir),
        Experiment::EscapeVector(p) => escape_vector(p, seed, dir),
        Experiment::HardmaxScan(p) => {
            let data = p.data.load(Path::new(""))?;
            let n_tok = data.n_tokens().context("hardmax-scan needs a context dataset")?;
            let d = data.d_in() / n_tok;
            let sphere = SphereSampler::new(d * d, p.n_directions, seed.wrapping_add(SEED_SCAN), p.sphere)?;
            let scan = hardmax_convergence_scan(&data, &sphere, &p.r_grid)?;
            scan.write_csv(&dir.join("scan.csv"))?;
            write_json(&dir.join("scan.json"), &scan)?;
            write_gnuplot(&dir.join("scan.dat"), &["r", "sup_gap", "stderr"], &scan.gnuplot_rows())?;
            let decreasing = scan.strictly_decreasing();
            let last = *scan.sup_gaps.last().unwrap_or(&f64::INFINITY);
            let below = last < p.gap_threshold;
            Ok(Outcome {
                verdict: if decreasing && below { Verdict::Pass } else { Verdict::Fail },
                summary: json!({
                    "data": data_summary(&p.data, &data)?,
                    "r_grid": scan.r_grid,
                    "sup_gaps": scan.sup_gaps,
                    "sup_stderr": scan.sup_stderr,
                    "strictly_decreasing": decreasing,
                    "final_below_threshold": below,
                    "hull_violations": scan.hull_violations,
                }),
            })
        }
        Experiment::SigmoidAsymptotics(p) => {
            let s = seed.wrapping_add(SEED_SCAN);
            let (verdict, summary) = match p.check {
                SigmoidCheck::Halfspace => {
                    let t = sigmoid_halfspace_check(p.f, &p.density, &p.theta, &p.r_grid, p.n_samples, s)?;
                    write_json(&dir.join("table.json"), &t)?;
                    let rows: Vec<Vec<f64>> = t.rows.iter().map(|r| vec![r.r, r.estimate, r.stderr, r.gap, r.gap_stderr]).collect();
                    write_gnuplot(&dir.join("table.dat"), &["r", "estimate", "stderr", "gap", "gap_stderr"], &rows)?;
                    let ok = t.last_gap_within(p.k_se);
                    (ok, json!({"limit": t.limit, "limit_stderr": t.limit_stderr, "half_mean_f": t.half_mean_f, "rows": t.rows}))
                }
                SigmoidCheck::Gradient => {
                    let t = sigmoid_gradient_limit_check(p.f, &p.density, &p.theta, &p.r_grid, p.n_samples, s)?;
                    write_json(&dir.join("table.json"), &t)?;
                    let rows: Vec<Vec<f64>> = t.rows.iter().map(|r| vec![r.r, r.gap, r.gap_stderr]).collect();
                    write_gnuplot(&dir.join("table.dat"), &["r", "gap", "gap_stderr"], &rows)?;
                    let ok = t.rows.last().is_some_and(|r| r.gap <= p.k_se * r.gap_stderr);
                    (ok, json!({"limit": t.limit, "limit_stderr": t.limit_stderr, "rows": t.rows}))
                }
            };
            Ok(Outcome { verdict: if verdict { Verdict::Pass } else { Verdict::Fail }, summary })
        }
        Experiment::W2Selftest(p) => {
            let rep = w2_selftest(p.n_instances, p.max_m, seed)?;
            write_json(&dir.join("w2_selftest.json"), &rep)?;
            Ok(Outcome { verdict: if rep.pass { Verdict::Pass } else { Verdict::Fail }, summary: serde_json::to_value(&rep)? })
        }
    }
}

fn tilted_limit(field: &ClosedFormField) -> Option<TiltedLimit> {
    match field {
        ClosedFormField::Tilted { offset, slope, .. } => Some(TiltedLimit { offset: *offset, slope: *slope }),
        _ => None,
    }
}

fn escape_scalar(p: &EscapeScalarParams, seed: u64, dir: &Path) -> anyhow::Result<Outcome> {
    let g = &p.field;
    let limit = tilted_limit(g);
    let set = match build_escape_set_scalar(g, limit.as_ref().map(|l| l as &dyn AsymptoticField), &p.build) {
        Ok(s) => s,
        Err(meanfield::Error::Construction(reason)) => {
            return Ok(Outcome { verdict: Verdict::Fail, summary: json!({"constructed": false, "reason": reason}) });
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&dir.join("escape_set.json"), &set)?;
    let u = set.push_direction();
    let families = p
        .perturbations
        .iter()
        .map(|n| PerturbationFamily::new(n.kind(p.omega), set.epsilon, u.clone()))
        .collect::<meanfield::Result<Vec<_>>>()?;
    let trial_seed = seed.wrapping_add(SEED_TRIALS);
    let reports = set.verify(g, &families, &p.ode, p.n_trials, p.tolerance, trial_seed)?;
    write_json(&dir.join("escape_reports.json"), &reports)?;

    let traj_dir = dir.join("trajectories");
    for (name, fam) in p.perturbations.iter().zip(&families) {
        for k in 0..p.write_trajectories.min(p.n_trials) {
            fs::create_dir_all(&traj_dir)?;
            let (w0, th0) = set.sample(g, &mut rng::substream(trial_seed, k as u64))?;
            let tr = escape_ode_run(g, fam, &w0, &th0, &p.ode)?;
            let tag = serde_json::to_value(name)?.as_str().unwrap_or("kind").to_string();
            tr.write_csv(&traj_dir.join(format!("{tag}_{k:03}.csv")))?;
        }
    }

    let pass = reports.iter().all(|r| r.pass && r.max_linear_deviation <= p.linear_tolerance);
    let per_kind: Vec<_> = p
        .perturbations
        .iter()
        .zip(&reports)
        .map(|(n, r)| {
            json!({
                "perturbation": n,
                "min_rate": r.min_rate,
                "max_linear_deviation": r.max_linear_deviation,
                "left_k": r.trials.iter().filter(|t| t.left_k).count(),
                "pass": r.pass && r.max_linear_deviation <= p.linear_tolerance,
            })
        })
        .collect();
    let ub = set.unbounded.as_ref();
    Ok(Outcome {
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        summary: json!({
            "constructed": true,
            "ledger": {
                "case": set.case,
                "sign": set.sign,
                "eta": set.eta,
                "epsilon": set.epsilon,
                "w_min": set.w_min,
                "beta": set.beta,
                "r_bar": ub.map(|u| u.r_bar),
                "tau": ub.map(|u| u.tau),
                "c": ub.map(|u| u.c),
                "theta_radius": set.theta_radius,
            },
            "reports": per_kind,
        }),
    })
}

fn escape_vector(p: &EscapeVectorParams, seed: u64, dir: &Path) -> anyhow::Result<Outcome> {
    let g = &p.field;
    let analysis = p.maximizer.as_ref().map(|t| analyze_maximizer(g, t, seed.wrapping_add(SEED_BUILD))).transpose()?;
    if let Some(a) = &analysis {
        write_json(&dir.join("maximizer.json"), a)?;
    }
    let v = match (&p.v, &analysis) {
        (Some(v), _) => v.clone(),
        (None, Some(a)) => a.v.clone(),
        (None, None) => anyhow::bail!("escape-vector needs `v` or `maximizer`"),
    };
    let cond = cond_refined_check(g, &v, p.eta, &p.cond)?;
    write_json(&dir.join("cond.json"), &cond)?;
    let local = analysis.as_ref().map(|a| json!({"c1": a.constants.c1, "c2": a.constants.c2, "pass": a.constants.pass}));
    let local_ok = analysis.as_ref().is_none_or(|a| a.constants.pass);
    let cond_json = json!({
        "lhs": cond.lhs, "rhs": cond.rhs, "margin": cond.margin, "pass": cond.pass,
        "inconclusive": cond.inconclusive, "delta_window": cond.delta_window, "beta": cond.beta,
    });
    if !cond.pass {
        return Ok(Outcome { verdict: Verdict::Fail, summary: json!({"cond": cond_json, "local": local, "certificate": null}) });
    }
    let cert = StableSetVector::from_report(&cond)?;
    write_json(&dir.join("certificate.json"), &cert)?;
    let eps = p.epsilon_fraction * cert.epsilon_max;
    let mut reports = Vec::new();
    for (i, n) in p.perturbations.iter().enumerate() {
        let fam = PerturbationFamily::new(n.kind(p.omega), eps, cert.v.clone())?;
        reports.push(verify_stable_set_vector(g, &cert, &fam, p.n_trials, &p.ode, p.tolerance, seed.wrapping_add(SEED_TRIALS + i as u64))?);
    }
    write_json(&dir.join("stable_reports.json"), &reports)?;
    let stable_ok = reports.iter().all(|r| r.pass);
    let per_kind: Vec<_> = p
        .perturbations
        .iter()
        .zip(&reports)
        .map(|(n, r)| json!({"perturbation": n, "exits": r.exits, "min_alignment": r.min_alignment, "min_norm_rate": r.min_norm_rate, "pass": r.pass}))
        .collect();
    Ok(Outcome {
        verdict: if stable_ok && local_ok { Verdict::Pass } else { Verdict::Fail },
        summary: json!({
            "cond": cond_json,
            "local": local,
            "certificate": {"delta": cert.delta, "gamma_prime": cert.gamma_prime, "gamma": cert.gamma, "epsilon_max": cert.epsilon_max, "epsilon": eps},
            "reports": per_kind,
        }),
    })
}
