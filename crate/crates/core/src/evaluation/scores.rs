use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, shape, Error, Result};
use crate::gaussians::LN_2PI;

/// Gaussian negative log-likelihoods of a realized vector under the
/// empirical moments of forecast samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllScores {
    pub full: f64,
    pub diagonal: f64,
}

/// Sample mean and covariance (divisor `n - 1`).
fn moments(samples: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = samples.nrows();
    if n < 2 {
        return Err(invalid("need at least two samples"));
    }
    let mean = samples.mean_axis(Axis(0)).expect("nonempty");
    let centered = &samples - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    Ok((mean, cov))
}

fn check(samples: &ArrayView2<f64>, realized: &ArrayView1<f64>) -> Result<()> {
    if samples.ncols() != realized.len() {
        return Err(shape(format!(
            "samples have {} columns, realized vector {}",
            samples.ncols(),
            realized.len()
        )));
    }
    Ok(())
}

/// NLL with the full empirical covariance, via a Cholesky factor.
pub fn nll_full(samples: ArrayView2<f64>, realized: ArrayView1<f64>) -> Result<f64> {
    check(&samples, &realized)?;
    let d = realized.len();
    let (mean, cov) = moments(samples)?;
    let singular = || {
        Error::Singular(format!(
            "empirical covariance of {} samples in {d} dimensions is not positive definite; \
             use the diagonal score",
            samples.nrows()
        ))
    };
    if samples.nrows() < d + 1 {
        return Err(singular());
    }
    let c = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let chol = c.cholesky().ok_or_else(singular)?;
    let e = DVector::from_iterator(d, realized.iter().zip(&mean).map(|(r, m)| r - m));
    let l = chol.l();
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return Err(singular());
    }
    let y = l.solve_lower_triangular(&e).ok_or_else(singular)?;
    Ok(0.5 * (d as f64 * LN_2PI + log_det + y.norm_squared()))
}

/// NLL keeping only the diagonal of the empirical covariance.
pub fn nll_diagonal(samples: ArrayView2<f64>, realized: ArrayView1<f64>) -> Result<f64> {
    check(&samples, &realized)?;
    let (mean, cov) = moments(samples)?;
    let mut total = 0.0;
    for i in 0..realized.len() {
        let v = cov[[i, i]];
        if !(v > 0.0) {
            return Err(Error::Singular(format!("sample variance of column {i} is zero")));
        }
        let e = realized[i] - mean[i];
        total += 0.5 * (LN_2PI + v.ln() + e * e / v);
    }
    Ok(total)
}

/// Both scores; fails if the full covariance is singular.
pub fn nll_scores(samples: ArrayView2<f64>, realized: ArrayView1<f64>) -> Result<NllScores> {
    Ok(NllScores {
        full: nll_full(samples, realized)?,
        diagonal: nll_diagonal(samples, realized)?,
    })
}

/// Univariate NLL of a realized equally weighted portfolio return under
/// the empirical moments of the samples' portfolio returns. `samples` are
/// simple (non-log) returns.
pub fn portfolio_nll(samples: ArrayView2<f64>, realized: f64) -> Result<f64> {
    if samples.nrows() < 3 {
        return Err(invalid("portfolio score needs at least three samples"));
    }
    let p = samples.mean_axis(Axis(1)).expect("nonempty columns");
    let col = p.insert_axis(Axis(1));
    nll_diagonal(col.view(), ndarray::aview1(&[realized]))
}
