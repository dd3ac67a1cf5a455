//! Large-parameter limits checked by Monte Carlo: softmax attention against
//! hardmax attention, sigmoid features against half-space indicators, and an
//! explorer for the conjectured limit of rescaled attention gradients.

mod attention;
mod emit;
mod hardmax;
mod quad;
mod sigmoid;
mod sphere;

pub use attention::{attention_gradient_limit_explore, AttentionExploreReport, AttentionGradRow, ContextFn, CONJECTURE_LABEL};
pub use emit::{write_gnuplot, write_json};
pub use hardmax::{hardmax_convergence_scan, ConvergenceScan, GapRow};
pub use sigmoid::{
    sigmoid_gradient_limit_check, sigmoid_halfspace_check, GradientRow, GradientTable, HalfspaceRow, HalfspaceTable, ScalarFn, XDensity,
};
pub use sphere::{SphereKind, SphereSampler};

/// Mean and standard error of the mean.
pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = crate::linalg::pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = crate::linalg::pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}
