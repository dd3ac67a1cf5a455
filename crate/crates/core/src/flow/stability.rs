use serde::{Deserialize, Serialize};

use super::integrate::{run_flow, FlowConfig};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::measure::{sample_ensemble, w2_exact, w2_sliced, InitSpec, EXACT_W2_CAP};
use crate::models::{Dataset, ModelSpec};

pub const SLICED_PROJECTIONS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub t: f64,
    pub w2: f64,
    /// `log W₂(t) − log W₂(0)`.
    pub log_growth: f64,
    /// `Ĉ t`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub m_small: usize,
    pub m_large: usize,
    pub exact: bool,
    /// `Ĉ ≥ 0`: smallest nonnegative rate whose exponential envelope covers
    /// the first half of the record. Rows check it against the whole record.
    pub rate: f64,
    /// Least-squares slope through the origin of `log W₂(t) − log W₂(0)`.
    pub rate_ls: f64,
    /// Smallest rate whose envelope covers the whole record.
    pub envelope_rate: f64,
    pub rows: Vec<StabilityRow>,
}

impl StabilityReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

/// Flows `μ_{m_small}` and `μ_{m_large}` from a common seed (the small
/// ensemble is the first `m_small` draws of the large one) and tracks their
/// `W₂` distance. The small ensemble is replicated `m_large / m_small` times
/// so the two measures have equal atom counts.
pub fn stability_experiment<M: ModelSpec + ?Sized>(
    spec: &InitSpec,
    m_small: usize,
    m_large: usize,
    model: &M,
    data: &Dataset,
    loss: &LossSpec,
    cfg: &FlowConfig,
) -> Result<StabilityReport> {
    if m_small == 0 || m_large % m_small != 0 {
        return Err(Error::invalid(format!("m_small = {m_small} must divide m_large = {m_large}")));
    }
    let large0 = sample_ensemble(spec, m_large)?;
    let small0 = large0.head(m_small)?;
    let small = run_flow(&small0, model, data, loss, cfg)?;
    let large = if m_small == m_large { small.clone() } else { run_flow(&large0, model, data, loss, cfg)? };
    if small.times.len() != large.times.len() {
        return Err(Error::Construction(format!(
            "flows recorded different time grids ({} vs {} points); step halving diverged",
            small.times.len(),
            large.times.len()
        )));
    }
    let k = m_large / m_small;
    let exact = m_large <= EXACT_W2_CAP;
    let mut w2 = Vec::with_capacity(small.times.len());
    for (a, b) in small.states.iter().zip(&large.states) {
        let a = a.replicate(k);
        w2.push(if exact { w2_exact(&a, b)? } else { w2_sliced(&a, b, SLICED_PROJECTIONS, spec.seed)? });
    }
    let times = small.times.clone();
    let w0 = w2[0];
    let growth: Vec<f64> = w2
        .iter()
        .map(|&w| {
            if w0 > 0.0 && w > 0.0 {
                (w / w0).ln()
            } else if w == 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let (mut stt, mut sty) = (0.0, 0.0);
    let mut envelope = f64::NEG_INFINITY;
    let mut calibrated = f64::NEG_INFINITY;
    let half = 0.5 * times[times.len() - 1];
    for (&t, &y) in times.iter().zip(&growth) {
        if t > 0.0 && y.is_finite() {
            stt += t * t;
            sty += t * y;
            envelope = envelope.max(y / t);
            if t <= half {
                calibrated = calibrated.max(y / t);
            }
        }
    }
    let rate_ls = if stt > 0.0 { sty / stt } else { 0.0 };
    let finite_or_zero = |x: f64| if x.is_finite() { x } else { 0.0 };
    let (rate, envelope) = (finite_or_zero(calibrated).max(0.0), finite_or_zero(envelope));
    let rows = times
        .iter()
        .zip(&w2)
        .zip(&growth)
        .map(|((&t, &w), &y)| {
            let bound = rate * t;
            StabilityRow { t, w2: w, log_growth: y, bound, holds: y <= bound + 1e-12 }
        })
        .collect();
    Ok(StabilityReport { m_small, m_large, exact, rate, rate_ls, envelope_rate: envelope, rows })
}
