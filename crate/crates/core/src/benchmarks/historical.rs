use crate::error::{invalid, Result};
use crate::evaluation::var_from_samples;

/// Trailing window length of the historical-simulation benchmark.
pub const HS_WINDOW: usize = 180;
/// Shortest window accepted by [`historical_var`].
pub const MIN_HS_WINDOW: usize = 20;

/// Historical-simulation VaR: the `round(W·(1 − level))`-th smallest of the
/// last `W` portfolio returns.
pub fn historical_var(window: &[f64], level: f64) -> Result<f64> {
    if window.len() < MIN_HS_WINDOW {
        return Err(invalid(format!(
            "historical window has {} returns, need at least {MIN_HS_WINDOW}",
            window.len()
        )));
    }
    var_from_samples(window, level, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistic_of_window() {
        let w: Vec<f64> = (1..=180).rev().map(f64::from).collect();
        assert_eq!(historical_var(&w, 0.95).unwrap(), 9.0);
        assert_eq!(historical_var(&w, 0.99).unwrap(), 2.0);
        assert_eq!(historical_var(&[-0.01; 30], 0.99).unwrap(), -0.01);
        assert!(historical_var(&w[..19], 0.95).is_err());
    }
}
