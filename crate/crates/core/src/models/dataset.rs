use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, AttentionHead, ModelSpec, SigmoidNet};
use crate::error::{Error, Result};
use crate::rng;

/// Empirical data measure `ρ̂ = (1/N) Σ δ_{(x_s, y_s)}`.
///
/// For attention data, each input is a flattened `n × d` context whose last
/// row is the query token.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<f64>,
    d_in: usize,
    d_out: usize,
    n_tokens: Option<usize>,
}

/// Sidecar describing a CSV dataset: each row holds `d_in` feature columns
/// followed by `d_out` label columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub d_in: usize,
    pub d_out: usize,
    #[serde(default)]
    pub n_tokens: Option<usize>,
    #[serde(default = "yes")]
    pub has_header: bool,
}

fn yes() -> bool {
    true
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<f64>, d_in: usize, d_out: usize, n_tokens: Option<usize>) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::dim("d_in and d_out must be positive"));
        }
        if inputs.len() % d_in != 0 || labels.len() % d_out != 0 {
            return Err(Error::dim("buffers are not multiples of the declared widths"));
        }
        let n = inputs.len() / d_in;
        if n == 0 || labels.len() / d_out != n {
            return Err(Error::dim(format!("need N >= 1 with equal input and label counts (got {} and {})", n, labels.len() / d_out)));
        }
        if let Some(t) = n_tokens {
            if t == 0 || d_in % t != 0 {
                return Err(Error::dim(format!("d_in = {d_in} is not n_tokens × d for n_tokens = {t}")));
            }
        }
        if !inputs.iter().chain(&labels).all(|x| x.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Self { inputs, labels, d_in, d_out, n_tokens })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.d_in
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn n_tokens(&self) -> Option<usize> {
        self.n_tokens
    }

    /// Token dimension for context data.
    pub fn token_dim(&self) -> Option<usize> {
        self.n_tokens.map(|n| self.d_in / n)
    }

    pub fn input(&self, s: usize) -> &[f64] {
        &self.inputs[s * self.d_in..(s + 1) * self.d_in]
    }

    pub fn label(&self, s: usize) -> &[f64] {
        &self.labels[s * self.d_out..(s + 1) * self.d_out]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn with_labels(&self, labels: Vec<f64>, d_out: usize) -> Result<Self> {
        Self::new(self.inputs.clone(), labels, self.d_in, d_out, self.n_tokens)
    }

    /// Every label is a canonical basis vector (exact zeros and a single one).
    pub fn check_one_hot(&self) -> Result<()> {
        for s in 0..self.len() {
            if !is_one_hot(self.label(s)) {
                return Err(Error::NotOneHot { index: s });
            }
        }
        Ok(())
    }

    pub fn load_csv(data_path: &Path, manifest: &DatasetManifest) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(manifest.has_header).from_path(data_path)?;
        let width = manifest.d_in + manifest.d_out;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::Format(format!("row {line} has {} fields, expected {width}", rec.len())));
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Format(format!("row {line}: not a number: {field:?}")))?;
                if k < manifest.d_in {
                    inputs.push(v);
                } else {
                    labels.push(v);
                }
            }
        }
        Self::new(inputs, labels, manifest.d_in, manifest.d_out, manifest.n_tokens)
    }

    /// Loads `path` with its sidecar `path.manifest.json`.
    pub fn load_csv_with_sidecar(data_path: &Path) -> Result<Self> {
        let mut side = data_path.as_os_str().to_owned();
        side.push(".manifest.json");
        let manifest: DatasetManifest = serde_json::from_reader(std::fs::File::open(side)?)?;
        Self::load_csv(data_path, &manifest)
    }

    pub fn write_csv(&self, data_path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(data_path)?;
        let header: Vec<String> = (0..self.d_in).map(|i| format!("x_{i}")).chain((0..self.d_out).map(|i| format!("y_{i}"))).collect();
        wtr.write_record(&header)?;
        for s in 0..self.len() {
            wtr.write_record(self.input(s).iter().chain(self.label(s)).map(|v| format!("{v:?}")))?;
        }
        wtr.flush()?;
        let manifest = DatasetManifest { d_in: self.d_in, d_out: self.d_out, n_tokens: self.n_tokens, has_header: true };
        let mut side = data_path.as_os_str().to_owned();
        side.push(".manifest.json");
        std::fs::write(side, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

pub(crate) fn is_one_hot(y: &[f64]) -> bool {
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    let zeros = y.iter().filter(|&&v| v == 0.0).count();
    ones == 1 && ones + zeros == y.len()
}

/// Built-in seeded data generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticSpec {
    /// Standard normal inputs and labels.
    Gaussian { n_samples: usize, d_in: usize, d_out: usize, seed: u64 },
    /// Standard normal inputs labelled by a width-`width` network
    /// `(1/width) Σ_j σ(⟨θ*_j, x⟩) w*_j` with `θ*_j ~ N(0, teacher_scale² I)`
    /// and `w*_j ~ N(0, I)`. With `bias_feature`, the last input coordinate is
    /// the constant 1.
    TeacherNetwork {
        n_samples: usize,
        d_in: usize,
        d_out: usize,
        width: usize,
        activation: Activation,
        #[serde(default = "one")]
        teacher_scale: f64,
        #[serde(default)]
        bias_feature: bool,
        seed: u64,
    },
    /// `k`-class Gaussian mixture with one-hot labels; class means are drawn
    /// as `separation · N(0, I)`.
    GaussianMixture { n_samples: usize, d_in: usize, n_classes: usize, separation: f64, seed: u64 },
    /// Standard normal contexts of `n_tokens` tokens in `R^d` with all-zero
    /// labels in `R^d`.
    GaussianContexts { n_samples: usize, d: usize, n_tokens: usize, seed: u64 },
    /// Standard normal contexts labelled by a width-`width` attention layer.
    AttentionTeacher {
        n_samples: usize,
        d: usize,
        n_tokens: usize,
        k: usize,
        width: usize,
        #[serde(default = "one")]
        teacher_scale: f64,
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match *self {
            SyntheticSpec::Gaussian { n_samples, d_in, d_out, seed } => {
                let mut r = rng::seeded(seed);
                let x = rng::normal_vec(&mut r, n_samples * d_in);
                let y = rng::normal_vec(&mut r, n_samples * d_out);
                Dataset::new(x, y, d_in, d_out, None)
            }
            SyntheticSpec::TeacherNetwork { n_samples, d_in, d_out, width, activation, teacher_scale, bias_feature, seed } => {
                if width == 0 {
                    return Err(Error::invalid("teacher width must be >= 1"));
                }
                let mut r = rng::seeded(seed);
                let net = SigmoidNet::new(activation, d_in, d_out);
                let thetas: Vec<Vec<f64>> =
                    (0..width).map(|_| rng::normal_vec(&mut r, d_in).into_iter().map(|v| teacher_scale * v).collect()).collect();
                let ws: Vec<Vec<f64>> = (0..width).map(|_| rng::normal_vec(&mut r, d_out)).collect();
                let mut xs = Vec::with_capacity(n_samples * d_in);
                let mut ys = Vec::with_capacity(n_samples * d_out);
                for _ in 0..n_samples {
                    let mut x = rng::normal_vec(&mut r, d_in);
                    if bias_feature {
                        x[d_in - 1] = 1.0;
                    }
                    let mut y = vec![0.0; d_out];
                    for (th, w) in thetas.iter().zip(&ws) {
                        crate::linalg::axpy(1.0 / width as f64, &net.phi_apply(th, w, &x), &mut y);
                    }
                    xs.extend(x);
                    ys.extend(y);
                }
                Dataset::new(xs, ys, d_in, d_out, None)
            }
            SyntheticSpec::GaussianMixture { n_samples, d_in, n_classes, separation, seed } => {
                if n_classes < 2 {
                    return Err(Error::invalid("mixture needs at least two classes"));
                }
                let mut r = rng::seeded(seed);
                let means: Vec<Vec<f64>> =
                    (0..n_classes).map(|_| rng::normal_vec(&mut r, d_in).into_iter().map(|v| separation * v).collect()).collect();
                let mut xs = Vec::with_capacity(n_samples * d_in);
                let mut ys = vec![0.0; n_samples * n_classes];
                for s in 0..n_samples {
                    let c = r.random_range(0..n_classes);
                    let noise = rng::normal_vec(&mut r, d_in);
                    xs.extend(means[c].iter().zip(noise).map(|(m, z)| m + z));
                    ys[s * n_classes + c] = 1.0;
                }
                Dataset::new(xs, ys, d_in, n_classes, None)
            }
            SyntheticSpec::GaussianContexts { n_samples, d, n_tokens, seed } => {
                let mut r = rng::seeded(seed);
                let x = rng::normal_vec(&mut r, n_samples * n_tokens * d);
                Dataset::new(x, vec![0.0; n_samples * d], n_tokens * d, d, Some(n_tokens))
            }
            SyntheticSpec::AttentionTeacher { n_samples, d, n_tokens, k, width, teacher_scale, seed } => {
                if width == 0 {
                    return Err(Error::invalid("teacher width must be >= 1"));
                }
                let mut r = rng::seeded(seed);
                let head = AttentionHead::new(d, n_tokens, k);
                let a: Vec<Vec<f64>> =
                    (0..width).map(|_| rng::normal_vec(&mut r, d * d).into_iter().map(|v| teacher_scale * v).collect()).collect();
                let v: Vec<Vec<f64>> = (0..width).map(|_| rng::normal_vec(&mut r, k * d)).collect();
                let mut xs = Vec::with_capacity(n_samples * n_tokens * d);
                let mut ys = Vec::with_capacity(n_samples * k);
                for _ in 0..n_samples {
                    let x = rng::normal_vec(&mut r, n_tokens * d);
                    let mut y = vec![0.0; k];
                    for (th, w) in a.iter().zip(&v) {
                        crate::linalg::axpy(1.0 / width as f64, &head.phi_apply(th, w, &x), &mut y);
                    }
                    xs.extend(x);
                    ys.extend(y);
                }
                Dataset::new(xs, ys, n_tokens * d, k, Some(n_tokens))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Dataset::new(vec![1.0, 2.0], vec![1.0], 2, 1, None).is_ok());
        assert!(Dataset::new(vec![1.0, 2.0], vec![1.0, 2.0], 2, 1, None).is_err());
        assert!(Dataset::new(vec![], vec![], 2, 1, None).is_err());
        assert!(Dataset::new(vec![0.0; 6], vec![0.0; 2], 6, 2, Some(4)).is_err());
    }

    #[test]
    fn mixture_labels_are_one_hot() {
        let d = SyntheticSpec::GaussianMixture { n_samples: 50, d_in: 3, n_classes: 4, separation: 2.0, seed: 1 }.generate().unwrap();
        d.check_one_hot().unwrap();
        let bad = d.with_labels(vec![0.5; 200], 4).unwrap();
        assert!(matches!(bad.check_one_hot(), Err(Error::NotOneHot { index: 0 })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let d = SyntheticSpec::AttentionTeacher { n_samples: 7, d: 2, n_tokens: 3, k: 2, width: 2, teacher_scale: 1.0, seed: 3 }
            .generate()
            .unwrap();
        d.write_csv(&path).unwrap();
        let back = Dataset::load_csv_with_sidecar(&path).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn teacher_generation_is_deterministic() {
        let spec = SyntheticSpec::TeacherNetwork {
            n_samples: 10,
            d_in: 4,
            d_out: 2,
            width: 8,
            activation: Activation::Sigmoid,
            teacher_scale: 1.0,
            bias_feature: true,
            seed: 5,
        };
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        assert!((0..a.len()).all(|s| a.input(s)[3] == 1.0));
    }
}
