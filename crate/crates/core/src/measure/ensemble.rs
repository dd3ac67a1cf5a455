use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One atom `(w, θ)` of an empirical measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Particle {
    pub fn new(w: Vec<f64>, theta: Vec<f64>) -> Self {
        Self { w, theta }
    }

    /// Concatenated coordinates `u = (w, θ)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut u = self.w.clone();
        u.extend_from_slice(&self.theta);
        u
    }

    pub fn from_slice(u: &[f64], d_w: usize) -> Self {
        Self { w: u[..d_w].to_vec(), theta: u[d_w..].to_vec() }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.theta).all(|x| x.is_finite())
    }
}

/// Uniformly weighted empirical measure `(1/m) Σ δ_{(w_i, θ_i)}`.
///
/// Particles are stored contiguously, each as `d_w + d_θ` coordinates with
/// the `w` block first.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    d_w: usize,
    d_theta: usize,
    data: Vec<f64>,
}

impl Ensemble {
    pub fn from_flat(d_w: usize, d_theta: usize, data: Vec<f64>) -> Result<Self> {
        let dim = d_w + d_theta;
        if dim == 0 {
            return Err(Error::dim("d_w + d_theta must be positive"));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::dim(format!("flat buffer of length {} is not a positive multiple of {dim}", data.len())));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { step: 0, what: "ensemble coordinates".into() });
        }
        Ok(Self { d_w, d_theta, data })
    }

    pub fn from_particles(d_w: usize, d_theta: usize, particles: &[Particle]) -> Result<Self> {
        let mut data = Vec::with_capacity(particles.len() * (d_w + d_theta));
        for (i, p) in particles.iter().enumerate() {
            if p.w.len() != d_w || p.theta.len() != d_theta {
                return Err(Error::dim(format!("particle {i} has dims ({}, {}), expected ({d_w}, {d_theta})", p.w.len(), p.theta.len())));
            }
            data.extend_from_slice(&p.w);
            data.extend_from_slice(&p.theta);
        }
        Self::from_flat(d_w, d_theta, data)
    }

    /// Builds an ensemble from row vectors `u_i = (w_i, θ_i)`.
    pub fn from_rows(d_w: usize, d_theta: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * (d_w + d_theta));
        for r in rows {
            if r.len() != d_w + d_theta {
                return Err(Error::dim("row length differs from d_w + d_theta"));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(d_w, d_theta, data)
    }

    pub fn m(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn d_w(&self) -> usize {
        self.d_w
    }

    pub fn d_theta(&self) -> usize {
        self.d_theta
    }

    /// Total dimension `d_w + d_θ`.
    pub fn dim(&self) -> usize {
        self.d_w + self.d_theta
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    /// Coordinates `u_i` of particle `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn w(&self, i: usize) -> &[f64] {
        &self.row(i)[..self.d_w]
    }

    pub fn theta(&self, i: usize) -> &[f64] {
        &self.row(i)[self.d_w..]
    }

    pub fn particle(&self, i: usize) -> Particle {
        Particle::from_slice(self.row(i), self.d_w)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim())
    }

    pub fn particles(&self) -> impl Iterator<Item = Particle> + '_ {
        self.rows().map(move |r| Particle::from_slice(r, self.d_w))
    }

    /// Repeats every particle `k` times in place order; the represented
    /// measure is unchanged.
    pub fn replicate(&self, k: usize) -> Ensemble {
        let mut data = Vec::with_capacity(self.data.len() * k);
        for r in self.rows() {
            for _ in 0..k {
                data.extend_from_slice(r);
            }
        }
        Ensemble { d_w: self.d_w, d_theta: self.d_theta, data }
    }

    /// The first `k` particles.
    pub fn head(&self, k: usize) -> Result<Ensemble> {
        if k == 0 || k > self.m() {
            return Err(Error::invalid(format!("head({k}) of an ensemble of {}", self.m())));
        }
        Ok(Ensemble { d_w: self.d_w, d_theta: self.d_theta, data: self.data[..k * self.dim()].to_vec() })
    }

    /// Reorders particles: particle `i` of the result is particle `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Ensemble {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Ensemble { d_w: self.d_w, d_theta: self.d_theta, data }
    }

    pub fn same_shape(&self, other: &Ensemble) -> bool {
        self.d_w == other.d_w && self.d_theta == other.d_theta && self.m() == other.m()
    }
}
