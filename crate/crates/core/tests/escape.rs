use meanfield::escape::*;
use meanfield::flow::{run_flow, FlowConfig, Residual};
use meanfield::losses::LossSpec;
use meanfield::measure::Ensemble;
use meanfield::models::{Activation, SigmoidNet, SyntheticSpec};

#[test]
fn frozen_residual_matches_full_flow() {
    let raw = SyntheticSpec::Gaussian { n_samples: 20, d_in: 3, d_out: 2, seed: 4 }.generate().unwrap();
    // centred labels make particles at (0, 0) stationary
    let mut y = raw.labels().to_vec();
    for k in 0..2 {
        let mean = y.iter().skip(k).step_by(2).sum::<f64>() / 20.0;
        y.iter_mut().skip(k).step_by(2).for_each(|v| *v -= mean);
    }
    let data = raw.with_labels(y, 2).unwrap();
    let model = SigmoidNet::new(Activation::Sigmoid, 3, 2);
    let loss = LossSpec::square(2);
    let m = 100_000;
    let (w0, th0) = (vec![0.7, -0.4], vec![0.3, -0.2, 0.5]);
    let mut flat = vec![0.0; m * 5];
    flat[..2].copy_from_slice(&w0);
    flat[2..5].copy_from_slice(&th0);
    let ens = Ensemble::from_flat(2, 3, flat).unwrap();
    let cfg = FlowConfig::rk4(0.05, 1.0);
    let traj = run_flow(&ens, &model, &data, &loss, &cfg).unwrap();
    let res = Residual::compute(&ens, &model, &data, &loss, None).unwrap();
    let field = EnsembleField::new(&model, &data, res);
    let ode = escape_ode_run(&field, &PerturbationFamily::none(2), &w0, &th0, &OdeConfig::new(0.05, 1.0)).unwrap();
    assert_eq!(traj.times.len(), ode.times.len());
    let mut worst = 0.0f64;
    for (st, (w, th)) in traj.states.iter().zip(ode.w.iter().zip(&ode.theta)) {
        for (a, b) in st.w(0).iter().chain(st.theta(0)).zip(w.iter().chain(th)) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-4, "max deviation {worst:e}");
    assert!(ode.w.last().unwrap() != &w0, "the escaping particle should move");
}

#[test]
fn unbounded_regime_bookkeeping() {
    let g = ClosedFormField::Tilted { offset: 1.0, slope: 0.5, d_theta: 2 };
    let lim = TiltedLimit { offset: 1.0, slope: 0.5 };
    let opts = ScalarBuildOptions { eta_search: (1.0, 1.0), n_eta: 1, n_sphere: 5000, seed: 2, ..Default::default() };
    let set = build_escape_set_scalar(&g, Some(&lim), &opts).unwrap();
    assert_eq!(set.case, EscapeCase::Unbounded);
    let cfg = OdeConfig::new(0.01, 10.0);
    let mut r = meanfield::rng::seeded(5);
    let mut n_exc = 0;
    for fam in PerturbationFamily::standard_kinds(set.epsilon, &set.push_direction()) {
        for _ in 0..30 {
            let (w0, th0) = set.sample(&g, &mut r).unwrap();
            let tr = escape_ode_run(&g, &fam, &w0, &th0, &cfg).unwrap();
            assert!(tr.min_rate >= set.eta - 1e-6);
            for e in excursions(&set, &g, &tr) {
                n_exc += 1;
                assert!(e.ok, "{e:?}");
            }
        }
    }
    // also start exactly on the level set in the medium regime, pushed outward
    let u = set.unbounded.as_ref().unwrap();
    let r0 = 2.5 * u.r_bar;
    for k in 0..16 {
        let a = std::f64::consts::TAU * k as f64 / 16.0;
        let phi = [a.cos(), a.sin()];
        // g(r φ) = −1 − 0.5 φ₁ r/√(1+r²) = −η needs φ₁ = 0
        if phi[0].abs() > 1e-9 {
            continue;
        }
        let th0 = vec![r0 * phi[0], r0 * phi[1]];
        let fam = PerturbationFamily::new(PerturbationKind::Adversarial, set.epsilon, set.push_direction()).unwrap();
        let tr = escape_ode_run(&g, &fam, &[set.w_min], &th0, &cfg).unwrap();
        for e in excursions(&set, &g, &tr) {
            n_exc += 1;
            assert!(e.ok, "{e:?}");
        }
    }
    let _ = n_exc;
}

#[test]
fn escape_reports_serialise() {
    let g = ClosedFormField::radial_scalar(2);
    let opts = ScalarBuildOptions { eta_search: (1.0, 1.0), n_eta: 1, n_interior: 4000, seed: 1, ..Default::default() };
    let set = build_escape_set_scalar(&g, None, &opts).unwrap();
    let reps = set
        .verify(&g, &PerturbationFamily::standard_kinds(set.epsilon, &set.push_direction()), &OdeConfig::new(0.02, 2.0), 8, 1e-6, 3)
        .unwrap();
    let js = serde_json::to_string(&(&set, &reps)).unwrap();
    let back: (EscapeSetScalar, Vec<EscapeReport>) = serde_json::from_str(&js).unwrap();
    assert_eq!(back.0, set);
    assert_eq!(back.1, reps);
    let dir = tempfile::tempdir().unwrap();
    let (w0, th0) = set.sample(&g, &mut meanfield::rng::seeded(1)).unwrap();
    let tr = escape_ode_run(&g, &PerturbationFamily::none(1), &w0, &th0, &OdeConfig::new(0.1, 1.0)).unwrap();
    let p = dir.path().join("traj.csv");
    tr.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("t,w_1,theta_1,theta_2,half_sq_norm,rate"));
    assert_eq!(text.lines().count(), tr.times.len() + 1);
}
