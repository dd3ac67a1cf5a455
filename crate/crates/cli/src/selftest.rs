use rand::Rng;

use meanfield::linalg::norm_sq;
use meanfield::losses::{LossSpec, Truncation};
use meanfield::measure::w2_selftest;
use meanfield::rng;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn loss_inequality(spec: &LossSpec, draws: usize, seed: u64) -> meanfield::Result<usize> {
    let mut r = rng::seeded(seed);
    let d = spec.d_out;
    let mut bad = 0;
    for _ in 0..draws {
        let z: Vec<f64> = rng::normal_vec(&mut r, d).into_iter().map(|x| 3.0 * x).collect();
        let y = match spec.kind {
            meanfield::losses::LossKind::Square => rng::normal_vec(&mut r, d),
            meanfield::losses::LossKind::CrossEntropy => {
                let mut y = vec![0.0; d];
                y[r.random_range(0..d)] = 1.0;
                y
            }
        };
        if norm_sq(&spec.grad(&z, &y)?) > 2.0 * spec.value(&z, &y)? * (1.0 + 1e-12) + 1e-300 {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Quick oracle suite: exact W₂ against brute force, the loss inequality
/// `|∇ℓ|² ≤ 2ℓ` and the truncation's knot values.
pub fn selftest(seed: u64) -> meanfield::Result<Vec<Check>> {
    let mut out = Vec::new();
    let w2 = w2_selftest(200, 6, seed)?;
    out.push(Check {
        name: "w2 exact vs permutation brute force",
        pass: w2.pass,
        detail: format!("max gap {:.2e}, sliced 1-d gap {:.2e}", w2.max_exact_gap, w2.max_sliced_gap_1d),
    });
    for spec in [LossSpec::square(3), LossSpec::cross_entropy(4)] {
        let bad = loss_inequality(&spec, 10_000, seed)?;
        out.push(Check {
            name: if spec.kind == meanfield::losses::LossKind::Square {
                "square loss |grad|^2 <= 2 loss"
            } else {
                "cross-entropy |grad|^2 <= 2 loss"
            },
            pass: bad == 0,
            detail: format!("{bad} violations in 10000 draws"),
        });
    }
    let t = Truncation::new(0.7)?;
    let a = t.alpha;
    let knot = (t.xi(1.5 * a) - 13.0 * a / 8.0).abs();
    let ends = (t.xi(a) - a).abs() + (t.xi(2.0 * a) - 2.0 * a).abs() + (t.xi_prime(a) - 1.0).abs() + t.xi_prime(2.0 * a).abs();
    out.push(Check {
        name: "truncation knots",
        pass: knot <= 1e-12 && ends <= 1e-12,
        detail: format!("midpoint error {knot:.1e}, knot error {ends:.1e}"),
    });
    Ok(out)
}
