use crate::error::{invalid, Result};

/// Default Monte-Carlo sample count for model-based VaR.
pub const VAR_SAMPLES: usize = 1000;

/// 1-based rank of the order statistic used as the VaR at `level`.
pub fn var_rank(n: usize, level: f64) -> usize {
    ((n as f64 * (1.0 - level)).round() as usize).clamp(1, n.max(1))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!("VaR level {level} outside (0, 1)")));
    }
    Ok(())
}

fn kth_smallest(values: &[f64], k: usize) -> f64 {
    let mut v = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// VaR as the `round(n·(1 − level))`-th smallest of the sampled portfolio
/// returns. With `expected_n`, the sample count must match it exactly.
pub fn var_from_samples(samples: &[f64], level: f64, expected_n: Option<usize>) -> Result<f64> {
    check_level(level)?;
    if let Some(n) = expected_n {
        if samples.len() != n {
            return Err(invalid(format!(
                "expected {n} samples, got {}",
                samples.len()
            )));
        }
    }
    if samples.is_empty() {
        return Err(invalid("no samples"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(invalid("samples contain NaN"));
    }
    Ok(kth_smallest(samples, var_rank(samples.len(), level)))
}

/// Squared shortfall below the VaR on breach days, zero otherwise.
pub fn rlf(var: f64, r: f64) -> f64 {
    if r <= var {
        (var - r) * (var - r)
    } else {
        0.0
    }
}
