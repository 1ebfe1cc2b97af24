//! Gaussian output heads: diagonal covariance and rank-1-perturbed
//! covariance `diag(std²) + u uᵀ`, with reparameterized sampling,
//! log-densities and the closed-form diagonal KL divergence.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, shape, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiag {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianDiag {
    /// Accepts zero standard deviations (degenerate point masses are valid
    /// for sampling); densities reject them.
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(shape(format!(
                "mean has {} entries, std {}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|&s| !(s >= 0.0)) {
            return Err(invalid("standard deviations must be nonnegative"));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + std ⊙ eps`.
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(eps)
            .map(|((m, s), e)| m + s * e)
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sample_with(&eps)
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(shape(format!("point has {} entries, expected {}", x.len(), self.dim())));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(invalid("log-density needs strictly positive std"));
        }
        let zeros = vec![0.0; self.dim()];
        Ok(-rank1_nll_row(x, &self.mean, &self.std, &zeros))
    }

    pub fn kl(&self, p: &GaussianDiag) -> Result<f64> {
        kl_diag_diag(self, p)
    }
}

/// Closed-form `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_diag_diag(q: &GaussianDiag, p: &GaussianDiag) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(shape(format!("KL between dimensions {} and {}", q.dim(), p.dim())));
    }
    if q.std.iter().chain(&p.std).any(|&s| !(s > 0.0)) {
        return Err(invalid("KL needs strictly positive std"));
    }
    Ok(kl_diag_row(&q.mean, &q.std, &p.mean, &p.std))
}

pub(crate) fn kl_diag_row(q_mean: &[f64], q_std: &[f64], p_mean: &[f64], p_std: &[f64]) -> f64 {
    let mut kl = 0.0;
    for k in 0..q_mean.len() {
        let ratio = q_std[k] / p_std[k];
        let diff = (p_mean[k] - q_mean[k]) / p_std[k];
        kl += 0.5 * (ratio * ratio + diff * diff - 1.0) - ratio.ln();
    }
    kl
}

/// Negative log-density of `x` under `N(mean, diag(std²) + u uᵀ)` using the
/// matrix-determinant lemma and Sherman–Morrison.
pub(crate) fn rank1_nll_row(x: &[f64], mean: &[f64], std: &[f64], u: &[f64]) -> f64 {
    let d = x.len();
    let mut log_det_d = 0.0;
    let mut c = 1.0;
    let mut p = 0.0;
    let mut quad_d = 0.0;
    for i in 0..d {
        let v = std[i] * std[i];
        let e = x[i] - mean[i];
        log_det_d += v.ln();
        c += u[i] * u[i] / v;
        p += e * u[i] / v;
        quad_d += e * e / v;
    }
    let log_det = log_det_d + c.ln();
    let quad = quad_d - p * p / c;
    0.5 * (d as f64 * LN_2PI + log_det + quad)
}

/// Gaussian with covariance `diag(std²) + perturb perturbᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianRank1 {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub perturb: Vec<f64>,
}

impl GaussianRank1 {
    pub fn new(mean: Vec<f64>, std: Vec<f64>, perturb: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.len() != perturb.len() {
            return Err(shape(format!(
                "rank-1 head lengths differ: mean {}, std {}, perturb {}",
                mean.len(),
                std.len(),
                perturb.len()
            )));
        }
        if std.iter().any(|&s| !(s >= 0.0)) {
            return Err(invalid("diagonal standard deviations must be nonnegative"));
        }
        Ok(Self { mean, std, perturb })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + std ⊙ eps_diag + perturb · eps_shared`; the result has
    /// covariance exactly `diag(std²) + perturb perturbᵀ`.
    pub fn sample_with(&self, eps_diag: &[f64], eps_shared: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.mean[i] + self.std[i] * eps_diag[i] + self.perturb[i] * eps_shared)
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let shared: f64 = rng.sample(StandardNormal);
        self.sample_with(&eps, shared)
    }

    fn check_positive(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(invalid("rank-1 density needs strictly positive diagonal"));
        }
        Ok(())
    }

    /// `ln det(D + u uᵀ) = ln det D + ln(1 + uᵀ D⁻¹ u)`.
    pub fn log_det(&self) -> Result<f64> {
        self.check_positive()?;
        let mut log_det = 0.0;
        let mut c = 1.0;
        for i in 0..self.dim() {
            let v = self.std[i] * self.std[i];
            log_det += v.ln();
            c += self.perturb[i] * self.perturb[i] / v;
        }
        Ok(log_det + c.ln())
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(shape(format!("point has {} entries, expected {}", x.len(), self.dim())));
        }
        self.check_positive()?;
        Ok(-rank1_nll_row(x, &self.mean, &self.std, &self.perturb))
    }

    /// Dense covariance matrix, for diagnostics and small dimensions.
    pub fn covariance(&self) -> Array2<f64> {
        let d = self.dim();
        Array2::from_shape_fn((d, d), |(i, j)| {
            let diag = if i == j { self.std[i] * self.std[i] } else { 0.0 };
            diag + self.perturb[i] * self.perturb[j]
        })
    }
}
