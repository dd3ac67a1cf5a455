use serde::{Deserialize, Serialize};

use super::{Activation, ModelSpec};
use crate::linalg::dot;

/// Two-layer network unit `Φ(w, θ)(x) = σ(⟨θ, x⟩) w`, with `d_θ = d_in` and
/// `d_w = d_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidNet {
    pub activation: Activation,
    pub d_in: usize,
    pub d_out: usize,
}

impl SigmoidNet {
    pub fn new(activation: Activation, d_in: usize, d_out: usize) -> Self {
        Self { activation, d_in, d_out }
    }
}

impl ModelSpec for SigmoidNet {
    fn d_w(&self) -> usize {
        self.d_out
    }

    fn d_theta(&self) -> usize {
        self.d_in
    }

    fn d_in(&self) -> usize {
        self.d_in
    }

    fn d_out(&self) -> usize {
        self.d_out
    }

    fn phi_apply(&self, theta: &[f64], w: &[f64], x: &[f64]) -> Vec<f64> {
        let a = self.activation.value(dot(theta, x));
        w.iter().map(|wi| a * wi).collect()
    }

    fn dphi_w(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let a = self.activation.value(dot(theta, x));
        let n = self.d_out;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = a;
        }
        m
    }

    fn adjoint_sample(&self, theta: &[f64], x: &[f64], cot: &[f64]) -> Vec<f64> {
        let a = self.activation.value(dot(theta, x));
        cot.iter().map(|c| a * c).collect()
    }

    fn grad_theta(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64]) -> Vec<f64> {
        let d = self.activation.derivative(dot(theta, x)) * dot(cot, w);
        x.iter().map(|xi| d * xi).collect()
    }

    fn hess_theta(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64]) -> Option<Vec<f64>> {
        let c = self.activation.second_derivative(dot(theta, x)) * dot(cot, w);
        let n = x.len();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = c * x[i] * x[j];
            }
        }
        Some(h)
    }

    fn accumulate_pullback(&self, theta: &[f64], w: &[f64], x: &[f64], cot: &[f64], scale: f64, acc_w: &mut [f64], acc_theta: &mut [f64]) {
        let s = dot(theta, x);
        let a = scale * self.activation.value(s);
        for (acc, c) in acc_w.iter_mut().zip(cot) {
            *acc += a * c;
        }
        let d = scale * self.activation.derivative(s) * dot(cot, w);
        for (acc, xi) in acc_theta.iter_mut().zip(x) {
            *acc += d * xi;
        }
    }

    fn phi_bound(&self, _x: &[f64]) -> Option<f64> {
        self.activation.sup_value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;
    use crate::rng;

    #[test]
    fn matches_definition_and_is_linear_in_w() {
        let net = SigmoidNet::new(Activation::Sigmoid, 3, 2);
        let mut r = rng::seeded(1);
        for _ in 0..50 {
            let th = rng::normal_vec(&mut r, 3);
            let x = rng::normal_vec(&mut r, 3);
            let w1 = rng::normal_vec(&mut r, 2);
            let w2 = rng::normal_vec(&mut r, 2);
            let s = super::super::sigmoid(dot(&th, &x));
            let out = net.phi_apply(&th, &w1, &x);
            assert_eq!(out, vec![s * w1[0], s * w1[1]]);
            let comb: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
            let lhs = net.phi_apply(&th, &comb, &x);
            let o2 = net.phi_apply(&th, &w2, &x);
            for k in 0..2 {
                assert!((lhs[k] - (2.0 * out[k] - 0.5 * o2[k])).abs() < 1e-14);
            }
            assert!(norm(&net.phi_apply(&th, &w1, &x)) <= norm(&w1) + 1e-15);
        }
    }

    #[test]
    fn grad_theta_matches_finite_differences() {
        for act in [Activation::Sigmoid, Activation::Gelu, Activation::Silu] {
            let net = SigmoidNet::new(act, 4, 3);
            let mut r = rng::seeded(2);
            for _ in 0..20 {
                let th = rng::normal_vec(&mut r, 4);
                let x = rng::normal_vec(&mut r, 4);
                let w = rng::normal_vec(&mut r, 3);
                let c = rng::normal_vec(&mut r, 3);
                let g = net.grad_theta(&th, &w, &x, &c);
                let h = 1e-6;
                for k in 0..4 {
                    let mut tp = th.clone();
                    tp[k] += h;
                    let mut tm = th.clone();
                    tm[k] -= h;
                    let fd = (dot(&c, &net.phi_apply(&tp, &w, &x)) - dot(&c, &net.phi_apply(&tm, &w, &x))) / (2.0 * h);
                    assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3), "{act:?}");
                }
            }
        }
    }
}
