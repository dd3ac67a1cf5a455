//! Softmax, its first two directional derivatives, and the argmax set used by
//! the hardmax limit.

use crate::linalg::dot;

/// Default tolerance for [`argmax_set`] when scanning hardmax limits.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// `σ(z)_i = e^{z_i} / Σ_j e^{z_j}`, evaluated after subtracting `max z`.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = z.iter().map(|&zi| (zi - zmax).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= s);
    e
}

/// `dσ(z)·h = σ ⊙ h − ⟨σ, h⟩ σ`.
pub fn dsoftmax(z: &[f64], h: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), h.len());
    dsoftmax_at(&softmax(z), h)
}

/// [`dsoftmax`] given a precomputed `σ(z)`.
pub fn dsoftmax_at(s: &[f64], h: &[f64]) -> Vec<f64> {
    let mean = dot(s, h);
    s.iter().zip(h).map(|(si, hi)| si * (hi - mean)).collect()
}

/// `d²σ(z)·(h, h)`, componentwise
/// `σ_i [(h_i − ⟨h,σ⟩)² − ⟨σ, h⊙h⟩ + ⟨σ,h⟩²]`.
pub fn d2softmax(z: &[f64], h: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), h.len());
    let s = softmax(z);
    let mean = dot(&s, h);
    let second: f64 = s.iter().zip(h).map(|(si, hi)| si * hi * hi).sum();
    let var = second - mean * mean;
    s.iter().zip(h).map(|(si, hi)| si * ((hi - mean).powi(2) - var)).collect()
}

/// Indices `i` with `z_i ≥ max z − tie_tol` (0-based, increasing).
pub fn argmax_set(z: &[f64], tie_tol: f64) -> Vec<usize> {
    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..z.len()).filter(|&i| z[i] >= zmax - tie_tol).collect()
}

/// `σ_∞(z)`: uniform weights on the argmax set.
pub fn hardmax(z: &[f64], tie_tol: f64) -> Vec<f64> {
    let set = argmax_set(z, tie_tol);
    let w = 1.0 / set.len() as f64;
    let mut out = vec![0.0; z.len()];
    for i in set {
        out[i] = w;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm_inf, norm_l1};
    use crate::rng;
    use rand::Rng;

    fn fd_first(z: &[f64], h: &[f64], eps: f64) -> Vec<f64> {
        let zp: Vec<f64> = z.iter().zip(h).map(|(a, b)| a + eps * b).collect();
        let zm: Vec<f64> = z.iter().zip(h).map(|(a, b)| a - eps * b).collect();
        softmax(&zp).iter().zip(softmax(&zm)).map(|(p, m)| (p - m) / (2.0 * eps)).collect()
    }

    fn fd_second(z: &[f64], h: &[f64], eps: f64) -> Vec<f64> {
        let zp: Vec<f64> = z.iter().zip(h).map(|(a, b)| a + eps * b).collect();
        let zm: Vec<f64> = z.iter().zip(h).map(|(a, b)| a - eps * b).collect();
        let s0 = softmax(z);
        softmax(&zp).iter().zip(softmax(&zm)).zip(s0).map(|((p, m), c)| (p - 2.0 * c + m) / (eps * eps)).collect()
    }

    #[test]
    fn uniform_and_shift_invariant() {
        let s = softmax(&[0.0; 4]);
        assert!(s.iter().all(|&x| (x - 0.25).abs() < 1e-16));
        let z = [0.3, -1.2, 2.5];
        let shifted: Vec<f64> = z.iter().map(|x| x + 17.0).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_term_value() {
        let s = softmax(&[10.0, 0.0]);
        assert!((s[0] - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-16);
        assert!((s[0] - 0.999_954_602_131_297_6).abs() < 1e-15);
    }

    #[test]
    fn dsoftmax_examples() {
        let d = dsoftmax(&[0.3, 1.0, -2.0], &[1.0, 1.0, 1.0]);
        assert!(d.iter().all(|x| x.abs() < 1e-15));
        let d = dsoftmax(&[0.0, 0.0], &[1.0, 0.0]);
        assert!((d[0] - 0.25).abs() < 1e-16 && (d[1] + 0.25).abs() < 1e-16);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut r = rng::seeded(17);
        for _ in 0..200 {
            let n = r.random_range(2..8);
            let z: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
            let h: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let d1 = dsoftmax(&z, &h);
            let f1 = fd_first(&z, &h, 1e-5);
            let scale = norm_inf(&d1).max(1e-3);
            for (a, b) in d1.iter().zip(&f1) {
                assert!((a - b).abs() / scale < 1e-6, "{a} vs {b}");
            }
            let d2 = d2softmax(&z, &h);
            let f2 = fd_second(&z, &h, 1e-4);
            let scale = norm_inf(&d2).max(1e-3);
            for (a, b) in d2.iter().zip(&f2) {
                assert!((a - b).abs() / scale < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn derivative_bounds() {
        let mut r = rng::seeded(3);
        for _ in 0..20_000 {
            let n = r.random_range(2..=8);
            let z: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
            let h: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let hi = norm_inf(&h);
            assert!(norm_l1(&dsoftmax(&z, &h)) <= 2.0 * hi + 1e-14);
            assert!(norm_l1(&d2softmax(&z, &h)) <= 6.0 * hi * hi + 1e-14);
            assert!(d2softmax(&z, &vec![1.0; n]).iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_set(&[3.0, 1.0, 2.0], 0.0), vec![0]);
        assert_eq!(argmax_set(&[2.0, 2.0, 2.0], 0.0), vec![0, 1, 2]);
        assert_eq!(argmax_set(&[1.0, 1.0 - 1e-12, 0.0], 1e-9), vec![0, 1]);
        assert_eq!(argmax_set(&[1.0, 1.0 - 1e-12, 0.0], 0.0), vec![0]);
    }
}
