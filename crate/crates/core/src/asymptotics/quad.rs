//! One-dimensional quadrature against the standard normal weight for
//! integrands sharply peaked at a known point.

/// Composite Simpson nodes on `[−9, 9]`, with a separately resolved segment
/// around `peak` of half-width `width`, paired with weights including `φ(s)`.
pub(crate) fn peaked_nodes(peak: f64, width: f64) -> Vec<(f64, f64)> {
    const N: usize = 600;
    let (lo, hi) = (-9.0, 9.0);
    let (a, b) = ((peak - width).max(lo), (peak + width).min(hi));
    let mut cuts = vec![(lo, hi, N)];
    if b > a {
        let per = |len: f64| (((N as f64) * len / (hi - lo)).ceil() as usize).max(2);
        cuts = vec![(lo, a, per(a - lo)), (a, b, N), (b, hi, per(hi - b))];
    }
    let mut out = Vec::with_capacity(3 * N);
    for (x0, x1, k) in cuts {
        if x1 <= x0 {
            continue;
        }
        let k = k + k % 2;
        let h = (x1 - x0) / k as f64;
        for i in 0..=k {
            let c = if i == 0 || i == k {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let x = x0 + h * i as f64;
            out.push((x, c * h / 3.0 * std_normal_pdf(x)));
        }
    }
    out
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
