//! Return series: synthetic generators, transforms, standardization and
//! sliding windows.

mod io;
mod synthetic;

pub use io::{
    format_number, load_prices_csv, load_returns_csv, write_prices_csv, write_returns_csv,
    PriceSeries, ReturnSeries,
};
pub use synthetic::{gen_noise, gen_osc_pca, random_rotation, OscPca, OscPcaConfig, Oscillator};

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{invalid, Error, Result};

/// Default window length.
pub const WINDOW_LEN: usize = 21;
/// Default fraction of windows assigned to training.
pub const TRAIN_FRACTION: f64 = 0.66;

/// Elementwise log-differences of a price matrix.
pub fn log_returns(prices: &Array2<f64>) -> Result<Array2<f64>> {
    for ((row, col), &p) in prices.indexed_iter() {
        if !(p > 0.0) || !p.is_finite() {
            return Err(invalid(format!(
                "price at row {row}, column {col} is {p}; prices must be positive"
            )));
        }
    }
    if prices.nrows() < 2 {
        return Err(invalid("need at least two prices to form a return"));
    }
    let logs = prices.mapv(f64::ln);
    Ok(&logs.slice(s![1.., ..]) - &logs.slice(s![..-1, ..]))
}

/// Simple returns `exp(r) - 1`.
pub fn nonlog_transform(r: &Array2<f64>) -> Array2<f64> {
    r.mapv(f64::exp_m1)
}

/// Equally weighted portfolio of simple returns, one value per row.
pub fn portfolio_returns(r_log: &Array2<f64>) -> Array1<f64> {
    let d = r_log.ncols().max(1) as f64;
    r_log
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v.exp_m1()).sum::<f64>() / d)
        .collect()
}

/// Standardized sliding windows over a return series with a chronological
/// train/test split.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    /// `N × M × d`, window `i` covering standardized rows `i .. i + M`.
    pub windows: Array3<f64>,
    /// Per-column training mean.
    pub mu: Array1<f64>,
    /// Per-column training standard deviation (population convention).
    pub sigma: Array1<f64>,
    /// Windows `0 .. n_train` are training windows.
    pub n_train: usize,
    /// The full standardized series.
    pub standardized: Array2<f64>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.windows.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_len(&self) -> usize {
        self.windows.len_of(Axis(1))
    }

    pub fn dim(&self) -> usize {
        self.windows.len_of(Axis(2))
    }

    /// First row not used for the standardization statistics; every test
    /// window ends at or after this row.
    pub fn split_row(&self) -> usize {
        self.n_train + self.window_len() - 1
    }

    pub fn window(&self, i: usize) -> ArrayView2<'_, f64> {
        self.windows.index_axis(Axis(0), i)
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.n_train
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.n_train..self.len()
    }

    /// Maps standardized values back to log-returns.
    pub fn destandardize(&self, x: &Array2<f64>) -> Array2<f64> {
        x * &self.sigma + &self.mu
    }

    pub fn standardize(&self, r: &Array2<f64>) -> Array2<f64> {
        (r - &self.mu) / &self.sigma
    }

    /// Writes `stats.csv` (asset, mu, sigma) and `windows.csv` (one row per
    /// window step) into `dir`.
    pub fn write_csv(&self, dir: &Path, assets: &[String]) -> Result<()> {
        if assets.len() != self.dim() {
            return Err(invalid("asset names do not match window dimension"));
        }
        let mut stats = csv::Writer::from_path(dir.join("stats.csv"))?;
        stats.write_record(["asset", "mu", "sigma"])?;
        for (j, name) in assets.iter().enumerate() {
            stats.write_record([
                name.clone(),
                format_number(self.mu[j]),
                format_number(self.sigma[j]),
            ])?;
        }
        stats.flush()?;

        let mut w = csv::Writer::from_path(dir.join("windows.csv"))?;
        let mut header = vec!["window".to_string(), "step".into(), "split".into()];
        header.extend(assets.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let split = if i < self.n_train { "train" } else { "test" };
            for (m, row) in self.window(i).rows().into_iter().enumerate() {
                let mut rec = vec![i.to_string(), m.to_string(), split.to_string()];
                rec.extend(row.iter().map(|&v| format_number(v)));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits `T - M` windows chronologically, standardizes every column by the
/// statistics of the rows spanned by training windows, and cuts windows of
/// length `window_len` from the standardized series.
pub fn prepare_windows(
    returns: &Array2<f64>,
    window_len: usize,
    train_frac: f64,
) -> Result<WindowBatch> {
    let (t, d) = returns.dim();
    if window_len < 2 {
        return Err(invalid("window length must be at least 2"));
    }
    if t <= window_len {
        return Err(invalid(format!(
            "series of length {t} is too short for windows of length {window_len}"
        )));
    }
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(invalid(format!("training fraction {train_frac} outside (0, 1]")));
    }
    if let Some(((row, col), v)) = returns.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("return at row {row}, column {col} is {v}")));
    }
    let n = t - window_len;
    let n_train = ((n as f64) * train_frac).floor() as usize;
    if n_train == 0 {
        return Err(invalid("training portion contains no windows"));
    }
    let split_row = (n_train + window_len - 1).min(t);
    let train = returns.slice(s![..split_row, ..]);
    let mu = train.mean_axis(Axis(0)).expect("nonempty training rows");
    let sigma = train.std_axis(Axis(0), 0.0);
    if let Some(col) = sigma.iter().position(|&s| !(s > 0.0)) {
        return Err(invalid(format!(
            "column {col} is constant over the training portion and cannot be standardized"
        )));
    }
    let standardized = (returns - &mu) / &sigma;
    let mut windows = Array3::zeros((n, window_len, d));
    for i in 0..n {
        windows
            .index_axis_mut(Axis(0), i)
            .assign(&standardized.slice(s![i..i + window_len, ..]));
    }
    Ok(WindowBatch {
        windows,
        mu,
        sigma,
        n_train,
        standardized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn log_returns_basic_cases() {
        let flat = Array2::from_elem((4, 2), 3.0);
        assert!(log_returns(&flat).unwrap().iter().all(|&v| v == 0.0));
        let r = log_returns(&array![[1.0], [2.0]]).unwrap();
        assert!((r[[0, 0]] - 2f64.ln()).abs() < 1e-15);
        let err = log_returns(&array![[1.0, 2.0], [1.0, -1.0]]).unwrap_err().to_string();
        assert!(err.contains("row 1, column 1"), "{err}");
    }

    #[test]
    fn nonlog_and_portfolio_arithmetic() {
        let r = array![[0.0, 0.0], [2f64.ln(), 0.0]];
        let simple = nonlog_transform(&r);
        assert_eq!(simple[[0, 0]], 0.0);
        assert!((simple[[1, 0]] - 1.0).abs() < 1e-15);
        let p = portfolio_returns(&r);
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.5).abs() < 1e-15);
        let back = simple.mapv(f64::ln_1p);
        assert!((back[[1, 0]] - r[[1, 0]]).abs() < 1e-12);
    }

    #[test]
    fn window_count_and_split_follow_formula() {
        let r = Array2::from_shape_fn((100, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let wb = prepare_windows(&r, 21, 0.66).unwrap();
        assert_eq!(wb.len(), 79);
        assert_eq!(wb.n_train, 52);
        assert_eq!(wb.split_row(), 72);
        assert_eq!(wb.window(3).row(0), wb.standardized.row(3));
        assert!(prepare_windows(&r.slice(s![..21, ..]).to_owned(), 21, 0.66).is_err());
    }

    #[test]
    fn sizes_of_reference_datasets() {
        for (t, n_train, n_test) in [(5071, 3333, 1717), (10000, 6586, 3393)] {
            let r = Array2::from_shape_fn((t, 1), |(i, _)| (i % 5) as f64);
            let wb = prepare_windows(&r, 21, 0.66).unwrap();
            assert_eq!(wb.n_train, n_train);
            assert_eq!(wb.len() - wb.n_train, n_test);
        }
    }
}
