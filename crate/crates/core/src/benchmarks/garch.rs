use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::optim::NelderMead;
use crate::data::format_number;
use crate::error::{invalid, shape, Error, Result};
use crate::gaussians::{GaussianDiag, LN_2PI};

/// Minimum series length accepted by [`garch_fit`].
pub const MIN_FIT_LEN: usize = 50;

/// Constant-mean GARCH(1,1):
/// `σ²_t = ω + α (r_{t−1} − μ)² + β σ²_{t−1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GarchParams {
    pub mu: f64,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GarchParams {
    pub fn new(mu: f64, omega: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self {
            mu,
            omega,
            alpha,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu.is_finite()
            && self.omega > 0.0
            && self.omega.is_finite()
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta < 1.0;
        if !ok {
            return Err(invalid(format!(
                "GARCH parameters {self:?} violate ω > 0, α, β ≥ 0, α + β < 1"
            )));
        }
        Ok(())
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha - self.beta)
    }

    /// Conditional variances `σ²_1 ..= σ²_{T+1}` of a series of length `T`
    /// given `σ²_1`; the last entry is the one-step-ahead forecast.
    pub fn variances(&self, r: &[f64], sigma2_1: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(r.len() + 1);
        let mut s2 = sigma2_1;
        out.push(s2);
        for &x in r {
            let e = x - self.mu;
            s2 = self.omega + self.alpha * e * e + self.beta * s2;
            out.push(s2);
        }
        out
    }

    /// Gaussian log-likelihood of `r` with `σ²_1` set to the sample variance.
    pub fn log_likelihood(&self, r: &[f64]) -> f64 {
        let s2 = self.variances(r, sample_variance(r));
        -0.5 * r
            .iter()
            .zip(&s2)
            .map(|(&x, &v)| {
                let e = x - self.mu;
                LN_2PI + v.ln() + e * e / v
            })
            .sum::<f64>()
    }

    /// Simulates `t` returns started from the unconditional variance.
    pub fn simulate<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Vec<f64> {
        let mut s2 = self.unconditional_variance();
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            let z: f64 = rng.sample(StandardNormal);
            let e = s2.sqrt() * z;
            out.push(self.mu + e);
            s2 = self.omega + self.alpha * e * e + self.beta * s2;
        }
        out
    }
}

/// Population variance (divisor `n`).
fn sample_variance(r: &[f64]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    let n = r.len() as f64;
    let m = r.iter().sum::<f64>() / n;
    r.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Unconstrained coordinates `(μ/s, ln ω', logit(α+β), logit(α/(α+β)))`
/// where `s` is the sample scale and `ω' = ω/s²`. Every point maps to a
/// stationary parameter set.
struct Reparam {
    scale: f64,
}

impl Reparam {
    fn to_params(&self, x: &[f64]) -> GarchParams {
        let persistence = logistic(x[2]);
        let share = logistic(x[3]);
        GarchParams {
            mu: x[0] * self.scale,
            omega: x[1].exp() * self.scale * self.scale,
            alpha: persistence * share,
            beta: persistence * (1.0 - share),
        }
    }

    fn to_coords(&self, p: &GarchParams) -> Vec<f64> {
        let persistence = p.alpha + p.beta;
        vec![
            p.mu / self.scale,
            (p.omega / (self.scale * self.scale)).ln(),
            logit(persistence),
            logit(p.alpha / persistence),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct GarchFit {
    pub params: GarchParams,
    /// `σ²_1 ..= σ²_T` at the fitted parameters.
    pub variances: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Gaussian maximum likelihood by Nelder–Mead on a reparameterization that
/// keeps every iterate stationary. The search restarts from its own optimum
/// until a restart no longer improves the likelihood.
pub fn garch_fit(r: &[f64]) -> Result<GarchFit> {
    garch_fit_with(r, &NelderMead::default())
}

pub fn garch_fit_with(r: &[f64], optimizer: &NelderMead) -> Result<GarchFit> {
    if r.len() < MIN_FIT_LEN {
        return Err(invalid(format!(
            "GARCH fit needs at least {MIN_FIT_LEN} returns, got {}",
            r.len()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("return series".into()));
    }
    if r.iter().all(|&v| v == r[0]) {
        return Err(invalid("return series is constant"));
    }
    let var = sample_variance(r);
    let rp = Reparam { scale: var.sqrt() };
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let start = GarchParams {
        mu: mean,
        omega: 0.05 * var,
        alpha: 0.05,
        beta: 0.9,
    };
    let objective = |x: &[f64]| -rp.to_params(x).log_likelihood(r);

    let mut x = rp.to_coords(&start);
    let mut best = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..10 {
        let m = optimizer.minimize(objective, &x).map_err(|e| match e {
            Error::NoConvergence {
                iterations,
                best_point,
                best_value,
            } => {
                let p = rp.to_params(&best_point);
                Error::NoConvergence {
                    iterations,
                    best_point: vec![p.mu, p.omega, p.alpha, p.beta],
                    best_value: -best_value,
                }
            }
            other => other,
        })?;
        iterations += m.iterations;
        x = m.x;
        let improved = best - m.value > 1e-9;
        best = best.min(m.value);
        if !improved {
            break;
        }
    }
    let params = rp.to_params(&x);
    params.validate()?;
    let mut variances = params.variances(r, var);
    variances.pop();
    Ok(GarchFit {
        params,
        variances,
        log_likelihood: params.log_likelihood(r),
        iterations,
    })
}

/// Next-step distribution after `history`, with `σ²_1` set to the sample
/// variance of the history. An empty history gives the unconditional
/// variance.
pub fn garch_forecast(params: &GarchParams, history: &[f64]) -> GaussianDiag {
    let var = if history.is_empty() {
        params.unconditional_variance()
    } else {
        *params
            .variances(history, sample_variance(history))
            .last()
            .expect("nonempty")
    };
    GaussianDiag {
        mean: vec![params.mu],
        std: vec![var.sqrt()],
    }
}

/// Independent per-asset GARCH models, i.e. zero cross-correlation.
#[derive(Clone, Debug)]
pub struct GarchStack {
    pub assets: Vec<String>,
    pub fits: Vec<GarchFit>,
}

impl GarchStack {
    pub fn fit(returns: ArrayView2<f64>, assets: &[String]) -> Result<Self> {
        if assets.len() != returns.ncols() {
            return Err(shape(format!(
                "{} asset names for {} columns",
                assets.len(),
                returns.ncols()
            )));
        }
        let mut fits = Vec::with_capacity(assets.len());
        for (j, col) in returns.columns().into_iter().enumerate() {
            let fit = garch_fit(&col.to_vec()).map_err(|e| match e {
                Error::InvalidArgument(msg) => invalid(format!("asset {}: {msg}", assets[j])),
                other => other,
            })?;
            log::debug!("asset {}: {:?}", assets[j], fit.params);
            fits.push(fit);
        }
        Ok(Self {
            assets: assets.to_vec(),
            fits,
        })
    }

    pub fn params(&self) -> Vec<GarchParams> {
        self.fits.iter().map(|f| f.params).collect()
    }

    /// Stacked per-asset next-step forecasts.
    pub fn forecast(&self, history: ArrayView2<f64>) -> Result<GaussianDiag> {
        stacked_forecast(&self.params(), history)
    }

    /// Writes `asset,mu,omega,alpha,beta,loglik`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["asset", "mu", "omega", "alpha", "beta", "loglik"])?;
        for (a, f) in self.assets.iter().zip(&self.fits) {
            let p = f.params;
            w.write_record([
                a.clone(),
                format_number(p.mu),
                format_number(p.omega),
                format_number(p.alpha),
                format_number(p.beta),
                format_number(f.log_likelihood),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stacked forecasts for a matrix history, one parameter set per column.
pub fn stacked_forecast(params: &[GarchParams], history: ArrayView2<f64>) -> Result<GaussianDiag> {
    if params.len() != history.ncols() {
        return Err(shape(format!(
            "{} GARCH models for {} columns",
            params.len(),
            history.ncols()
        )));
    }
    let mut mean = Vec::with_capacity(params.len());
    let mut std = Vec::with_capacity(params.len());
    for (p, col) in params.iter().zip(history.columns()) {
        let g = garch_forecast(p, &col.to_vec());
        mean.push(g.mean[0]);
        std.push(g.std[0]);
    }
    Ok(GaussianDiag { mean, std })
}

/// Reads a parameter file written by [`GarchStack::write_csv`].
pub fn read_params_csv(path: &Path) -> Result<(Vec<String>, Vec<GarchParams>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut assets, mut params) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Parse { line: i + 2, msg };
        let f = |j: usize| {
            rec.get(j)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("{}: column {} is not a number", path.display(), j + 1)))
        };
        assets.push(rec.get(0).unwrap_or_default().to_string());
        let p = GarchParams {
            mu: f(1)?,
            omega: f(2)?,
            alpha: f(3)?,
            beta: f(4)?,
        };
        p.validate().map_err(|e| bad(e.to_string()))?;
        params.push(p);
    }
    Ok((assets, params))
}
