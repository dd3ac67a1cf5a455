use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use meanfield::asymptotics::{ScalarFn, SphereKind, XDensity};
use meanfield::escape::{ClosedFormField, CondOptions, OdeConfig, PerturbationKind, ScalarBuildOptions};
use meanfield::flow::FlowConfig;
use meanfield::losses::LossSpec;
use meanfield::measure::InitSpec;
use meanfield::models::{Dataset, Model, ModelSpec, SyntheticSpec};

// component seeds are the global seed plus a fixed offset
pub const SEED_INIT: u64 = 0;
pub const SEED_DATA: u64 = 1;
pub const SEED_SCAN: u64 = 2;
pub const SEED_TRIALS: u64 = 3;
pub const SEED_BUILD: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Simulate(SimulateParams),
    Stability(StabilityParams),
    EscapeScalar(EscapeScalarParams),
    EscapeVector(EscapeVectorParams),
    HardmaxScan(HardmaxScanParams),
    SigmoidAsymptotics(SigmoidParams),
    W2Selftest(W2SelftestParams),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::Stability(_) => "stability",
            Experiment::EscapeScalar(_) => "escape-scalar",
            Experiment::EscapeVector(_) => "escape-vector",
            Experiment::HardmaxScan(_) => "hardmax-scan",
            Experiment::SigmoidAsymptotics(_) => "sigmoid-asymptotics",
            Experiment::W2Selftest(_) => "w2-selftest",
        }
    }
}

/// Exactly one of `path` (CSV with a `<path>.manifest.json` sidecar) or `synthetic`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DataSource {
    /// Relative paths are taken from `base`.
    pub fn load(&self, base: &Path) -> anyhow::Result<Dataset> {
        match (&self.path, &self.synthetic) {
            (Some(p), None) => {
                let p = if p.is_absolute() { p.clone() } else { base.join(p) };
                Dataset::load_csv_with_sidecar(&p).with_context(|| format!("unreadable dataset {}", p.display()))
            }
            (None, Some(s)) => Ok(s.generate()?),
            _ => bail!("data needs exactly one of `path` or `synthetic`"),
        }
    }

    fn reseed(&mut self, seed: u64) {
        if let Some(s) = self.synthetic.as_mut() {
            match s {
                SyntheticSpec::Gaussian { seed: x, .. }
                | SyntheticSpec::TeacherNetwork { seed: x, .. }
                | SyntheticSpec::GaussianMixture { seed: x, .. }
                | SyntheticSpec::GaussianContexts { seed: x, .. }
                | SyntheticSpec::AttentionTeacher { seed: x, .. } => *x = seed,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateParams {
    pub model: Model,
    pub loss: LossSpec,
    pub data: DataSource,
    pub init: InitSpec,
    pub m: usize,
    pub flow: FlowConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityParams {
    pub model: Model,
    pub loss: LossSpec,
    pub data: DataSource,
    pub init: InitSpec,
    pub m_small: usize,
    pub m_large: usize,
    pub flow: FlowConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationName {
    None,
    ConstantOffset,
    TimeOscillating,
    Adversarial,
}

impl PerturbationName {
    pub fn kind(self, omega: f64) -> PerturbationKind {
        match self {
            PerturbationName::None => PerturbationKind::None,
            PerturbationName::ConstantOffset => PerturbationKind::ConstantOffset,
            PerturbationName::TimeOscillating => PerturbationKind::TimeOscillating { omega },
            PerturbationName::Adversarial => PerturbationKind::Adversarial,
        }
    }
}

fn all_perturbations() -> Vec<PerturbationName> {
    vec![PerturbationName::ConstantOffset, PerturbationName::TimeOscillating, PerturbationName::Adversarial]
}
fn three() -> f64 {
    3.0
}
fn hundred() -> usize {
    100
}
fn escape_ode() -> OdeConfig {
    OdeConfig::new(0.01, 10.0)
}
fn rate_tol() -> f64 {
    1e-6
}
fn linear_tol() -> f64 {
    0.05
}
fn one_usize() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeScalarParams {
    pub field: ClosedFormField,
    #[serde(default)]
    pub build: ScalarBuildOptions,
    #[serde(default = "all_perturbations")]
    pub perturbations: Vec<PerturbationName>,
    #[serde(default = "three")]
    pub omega: f64,
    #[serde(default = "hundred")]
    pub n_trials: usize,
    #[serde(default = "escape_ode")]
    pub ode: OdeConfig,
    /// Slack on `d/dt ½|w|² ≥ η`.
    #[serde(default = "rate_tol")]
    pub tolerance: f64,
    /// Allowed relative deviation of `|w_t|` from its linear fit.
    #[serde(default = "linear_tol")]
    pub linear_tolerance: f64,
    /// Trajectories written as CSV per perturbation kind.
    #[serde(default = "one_usize")]
    pub write_trajectories: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeVectorParams {
    pub field: ClosedFormField,
    pub eta: f64,
    /// Defaults to the direction found at `maximizer`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    /// Candidate maximiser of `½|g|²` for the local constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maximizer: Option<Vec<f64>>,
    #[serde(default)]
    pub cond: CondOptions,
    #[serde(default = "all_perturbations")]
    pub perturbations: Vec<PerturbationName>,
    #[serde(default = "three")]
    pub omega: f64,
    /// `ε` as a fraction of the certificate's `epsilon_max`.
    #[serde(default = "one_f64")]
    pub epsilon_fraction: f64,
    #[serde(default = "hundred")]
    pub n_trials: usize,
    #[serde(default = "escape_ode")]
    pub ode: OdeConfig,
    #[serde(default = "rate_tol")]
    pub tolerance: f64,
}

fn default_sphere_kind() -> SphereKind {
    SphereKind::StratifiedPlusAxes
}
fn default_gap_threshold() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardmaxScanParams {
    pub data: DataSource,
    pub n_directions: usize,
    #[serde(default = "default_sphere_kind")]
    pub sphere: SphereKind,
    pub r_grid: Vec<f64>,
    /// The verdict requires the final sup gap below this.
    #[serde(default = "default_gap_threshold")]
    pub gap_threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmoidCheck {
    Halfspace,
    Gradient,
}

fn default_k_se() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmoidParams {
    pub check: SigmoidCheck,
    pub f: ScalarFn,
    pub density: XDensity,
    pub theta: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub n_samples: usize,
    /// The verdict requires the final gap within this many standard errors.
    #[serde(default = "default_k_se")]
    pub k_se: f64,
}

fn two_hundred() -> usize {
    200
}
fn six() -> usize {
    6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct W2SelftestParams {
    #[serde(default = "two_hundred")]
    pub n_instances: usize,
    #[serde(default = "six")]
    pub max_m: usize,
}

impl Default for W2SelftestParams {
    fn default() -> Self {
        Self { n_instances: 200, max_m: 6 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Overwrites every component seed from the global one.
    pub fn resolve_seeds(&mut self) {
        let s = self.seed;
        match &mut self.experiment {
            Experiment::Simulate(p) => {
                p.init.seed = s.wrapping_add(SEED_INIT);
                p.data.reseed(s.wrapping_add(SEED_DATA));
            }
            Experiment::Stability(p) => {
                p.init.seed = s.wrapping_add(SEED_INIT);
                p.data.reseed(s.wrapping_add(SEED_DATA));
            }
            Experiment::EscapeScalar(p) => p.build.seed = s.wrapping_add(SEED_BUILD),
            Experiment::EscapeVector(p) => p.cond.seed = s.wrapping_add(SEED_BUILD),
            Experiment::HardmaxScan(p) => p.data.reseed(s.wrapping_add(SEED_DATA)),
            Experiment::SigmoidAsymptotics(_) | Experiment::W2Selftest(_) => {}
        }
    }

    /// Shape checks that do not need the dataset.
    pub fn validate(&self) -> anyhow::Result<()> {
        let model_shape = |model: &Model, loss: &LossSpec, init: &InitSpec, flow: &FlowConfig| -> anyhow::Result<()> {
            if model.d_w() != init.d_w || model.d_theta() != init.d_theta {
                bail!("init has (d_w, d_theta) = ({}, {}), model needs ({}, {})", init.d_w, init.d_theta, model.d_w(), model.d_theta());
            }
            if loss.d_out != model.d_out() {
                bail!("loss d_out {} != model d_out {}", loss.d_out, model.d_out());
            }
            init.validate()?;
            flow.validate()?;
            Ok(())
        };
        match &self.experiment {
            Experiment::Simulate(p) => {
                model_shape(&p.model, &p.loss, &p.init, &p.flow)?;
                if p.m == 0 {
                    bail!("m must be >= 1");
                }
            }
            Experiment::Stability(p) => {
                model_shape(&p.model, &p.loss, &p.init, &p.flow)?;
                if p.m_small == 0 || p.m_large % p.m_small != 0 {
                    bail!("m_small must divide m_large");
                }
            }
            Experiment::EscapeScalar(p) => {
                use meanfield::escape::FieldG;
                if p.field.d_w() != 1 {
                    bail!("escape-scalar needs a field with d_w = 1");
                }
                if p.n_trials == 0 || p.perturbations.is_empty() {
                    bail!("n_trials and perturbations must be nonempty");
                }
            }
            Experiment::EscapeVector(p) => {
                use meanfield::escape::FieldG;
                if let Some(v) = &p.v {
                    if v.len() != p.field.d_w() {
                        bail!("v has length {}, field has d_w = {}", v.len(), p.field.d_w());
                    }
                }
                if let Some(t) = &p.maximizer {
                    if t.len() != p.field.d_theta() {
                        bail!("maximizer has length {}, field has d_theta = {}", t.len(), p.field.d_theta());
                    }
                }
                if p.v.is_none() && p.maximizer.is_none() {
                    bail!("escape-vector needs `v` or `maximizer`");
                }
                if !(p.eta > 0.0) || !(p.epsilon_fraction > 0.0 && p.epsilon_fraction <= 1.0) {
                    bail!("eta must be positive and epsilon_fraction in (0, 1]");
                }
            }
            Experiment::HardmaxScan(p) => {
                if p.n_directions == 0 || p.r_grid.is_empty() {
                    bail!("n_directions and r_grid must be nonempty");
                }
            }
            Experiment::SigmoidAsymptotics(p) => {
                if p.theta.len() != p.density.d() {
                    bail!("theta has length {}, density has d = {}", p.theta.len(), p.density.d());
                }
                if p.n_samples == 0 || p.r_grid.is_empty() {
                    bail!("n_samples and r_grid must be nonempty");
                }
            }
            Experiment::W2Selftest(p) => {
                if p.max_m == 0 || p.max_m > meanfield::measure::BRUTE_FORCE_CAP {
                    bail!("max_m must lie in 1..={}", meanfield::measure::BRUTE_FORCE_CAP);
                }
            }
        }
        Ok(())
    }
}
