use serde::{Deserialize, Serialize};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Scalar activations with bounded Lipschitz derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    /// Exact form `s Φ(s)` with `Φ` the standard normal CDF.
    Gelu,
    /// `s σ(s)`, also known as swish.
    Silu,
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn normal_cdf(s: f64) -> f64 {
    0.5 * libm::erfc(-s / std::f64::consts::SQRT_2)
}

#[inline]
fn normal_pdf(s: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * s * s).exp()
}

impl Activation {
    pub fn value(self, s: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(s),
            Activation::Gelu => s * normal_cdf(s),
            Activation::Silu => s * sigmoid(s),
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let p = sigmoid(s);
                p * (1.0 - p)
            }
            Activation::Gelu => normal_cdf(s) + s * normal_pdf(s),
            Activation::Silu => {
                let p = sigmoid(s);
                p + s * p * (1.0 - p)
            }
        }
    }

    pub fn second_derivative(self, s: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let p = sigmoid(s);
                p * (1.0 - p) * (1.0 - 2.0 * p)
            }
            Activation::Gelu => normal_pdf(s) * (2.0 - s * s),
            Activation::Silu => {
                let p = sigmoid(s);
                p * (1.0 - p) * (2.0 + s * (1.0 - 2.0 * p))
            }
        }
    }

    /// `sup |σ|`, when finite.
    pub fn sup_value(self) -> Option<f64> {
        match self {
            Activation::Sigmoid => Some(1.0),
            _ => None,
        }
    }
}

/// `(σ(⟨θ,x⟩), σ′(⟨θ,x⟩))`.
pub fn sigmoid_phi(act: Activation, theta: &[f64], x: &[f64]) -> (f64, f64) {
    let s = crate::linalg::dot(theta, x);
    (act.value(s), act.derivative(s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_theta() {
        let (v, d) = sigmoid_phi(Activation::Sigmoid, &[0.0, 0.0], &[3.0, -7.0]);
        assert_eq!(v, 0.5);
        assert_eq!(d, 0.25);
    }

    #[test]
    fn sigmoid_symmetry() {
        for k in -50..50 {
            let s = k as f64 * 0.37;
            assert!((sigmoid(s) + sigmoid(-s) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for act in [Activation::Sigmoid, Activation::Gelu, Activation::Silu] {
            for k in -40..40 {
                let s = k as f64 * 0.21 + 0.013;
                let fd1 = (act.value(s + h) - act.value(s - h)) / (2.0 * h);
                let fd2 = (act.derivative(s + h) - act.derivative(s - h)) / (2.0 * h);
                assert!((fd1 - act.derivative(s)).abs() < 1e-8, "{act:?} σ' at {s}");
                assert!((fd2 - act.second_derivative(s)).abs() < 1e-8, "{act:?} σ'' at {s}");
            }
        }
    }

    #[test]
    fn derivative_bounded() {
        for act in [Activation::Sigmoid, Activation::Gelu, Activation::Silu] {
            let sup = (-4000..4000).map(|k| act.derivative(k as f64 * 0.01).abs()).fold(0.0, f64::max);
            assert!(sup < 1.2, "{act:?}: {sup}");
        }
    }
}
