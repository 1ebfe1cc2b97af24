use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::scores::{nll_diagonal, nll_full, portfolio_nll};
use super::var::{rlf, var_from_samples, VAR_SAMPLES};
use crate::benchmarks::{historical_var, stacked_forecast, GarchParams, HS_WINDOW};
use crate::data::{format_number, nonlog_transform, portfolio_returns};
use crate::error::{invalid, shape, Error, Result};
use crate::model::TempVae;

pub const LEVELS: [f64; 2] = [0.95, 0.99];

/// Next-day VaR estimates at the two reported levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarPair {
    pub var95: f64,
    pub var99: f64,
}

/// Something that estimates next-day portfolio VaR from past log-returns.
pub trait Forecaster {
    fn name(&self) -> &str;

    /// Rows of history needed before the first estimate.
    fn warmup(&self) -> usize;

    /// VaR for day `t` given log-return rows `0 .. t`.
    fn value_at_risk(&mut self, t: usize, history: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<VarPair>;
}

/// Something that draws next-day log-return vectors from a predictive
/// distribution.
pub trait ReturnSampler {
    fn name(&self) -> &str;

    fn warmup(&self) -> usize;

    /// `n × d` log-return draws for day `t` given rows `0 .. t`.
    fn sample_next(
        &mut self,
        t: usize,
        history: ArrayView2<f64>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Array2<f64>>;
}

impl<S: ReturnSampler + ?Sized> ReturnSampler for Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn warmup(&self) -> usize {
        (**self).warmup()
    }

    fn sample_next(
        &mut self,
        t: usize,
        history: ArrayView2<f64>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Array2<f64>> {
        (**self).sample_next(t, history, n, rng)
    }
}

/// Model-based VaR: order statistics of the equally weighted portfolio
/// returns of `n_samples` draws.
pub struct MonteCarloVar<S> {
    pub sampler: S,
    pub n_samples: usize,
}

impl<S: ReturnSampler> MonteCarloVar<S> {
    pub fn new(sampler: S) -> Self {
        Self {
            sampler,
            n_samples: VAR_SAMPLES,
        }
    }
}

impl<S: ReturnSampler> Forecaster for MonteCarloVar<S> {
    fn name(&self) -> &str {
        self.sampler.name()
    }

    fn warmup(&self) -> usize {
        self.sampler.warmup()
    }

    fn value_at_risk(&mut self, t: usize, history: ArrayView2<f64>, rng: &mut dyn RngCore) -> Result<VarPair> {
        let draws = self.sampler.sample_next(t, history, self.n_samples, rng)?;
        let p = portfolio_returns(&draws).to_vec();
        Ok(VarPair {
            var95: var_from_samples(&p, LEVELS[0], Some(self.n_samples))?,
            var99: var_from_samples(&p, LEVELS[1], Some(self.n_samples))?,
        })
    }
}

/// Trained model forecasts in the standardized space, mapped back to
/// log-returns with the training statistics.
pub struct TempVaeSampler<'a> {
    pub model: &'a TempVae,
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
}

impl ReturnSampler for TempVaeSampler<'_> {
    fn name(&self) -> &str {
        "tempvae"
    }

    fn warmup(&self) -> usize {
        self.model.config.window_len - 1
    }

    fn sample_next(
        &mut self,
        _t: usize,
        history: ArrayView2<f64>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Array2<f64>> {
        let m = self.warmup();
        if history.nrows() < m {
            return Err(invalid(format!("history has {} rows, need {m}", history.nrows())));
        }
        let recent = history.slice(s![history.nrows() - m.., ..]);
        let standardized = (&recent - &self.mu) / &self.sigma;
        let z = self.model.forecast_next(standardized.view(), n, rng)?;
        Ok(z * &self.sigma + &self.mu)
    }
}

/// Independent per-asset GARCH(1,1) forecasts.
pub struct GarchSampler {
    pub params: Vec<GarchParams>,
    /// Rows required before forecasting.
    pub min_history: usize,
}

impl ReturnSampler for GarchSampler {
    fn name(&self) -> &str {
        "garch"
    }

    fn warmup(&self) -> usize {
        self.min_history
    }

    fn sample_next(
        &mut self,
        _t: usize,
        history: ArrayView2<f64>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Array2<f64>> {
        let g = stacked_forecast(&self.params, history)?;
        let d = g.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            for j in 0..d {
                let e: f64 = StandardNormal.sample(rng);
                row[j] = g.mean[j] + g.std[j] * e;
            }
        }
        Ok(out)
    }
}

/// Draws from a known generating distribution, given as a closure of the
/// day index.
pub struct FnSampler<F> {
    pub name: String,
    pub f: F,
}

impl<F> ReturnSampler for FnSampler<F>
where
    F: FnMut(usize, usize, &mut dyn RngCore) -> Array2<f64>,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn warmup(&self) -> usize {
        0
    }

    fn sample_next(
        &mut self,
        t: usize,
        _history: ArrayView2<f64>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Array2<f64>> {
        Ok((self.f)(t, n, rng))
    }
}

/// Historical simulation over the trailing `window` portfolio returns.
pub struct HistoricalSimulation {
    pub window: usize,
}

impl Default for HistoricalSimulation {
    fn default() -> Self {
        Self { window: HS_WINDOW }
    }
}

impl Forecaster for HistoricalSimulation {
    fn name(&self) -> &str {
        "hs"
    }

    fn warmup(&self) -> usize {
        self.window
    }

    fn value_at_risk(&mut self, _t: usize, history: ArrayView2<f64>, _rng: &mut dyn RngCore) -> Result<VarPair> {
        let start = history.nrows().saturating_sub(self.window);
        let p = portfolio_returns(&history.slice(s![start.., ..]).to_owned()).to_vec();
        Ok(VarPair {
            var95: historical_var(&p, LEVELS[0])?,
            var99: historical_var(&p, LEVELS[1])?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BacktestDay {
    pub index: usize,
    pub realized: f64,
    pub var95: f64,
    pub var99: f64,
}

impl BacktestDay {
    pub fn breach95(&self) -> bool {
        self.realized < self.var95
    }

    pub fn breach99(&self) -> bool {
        self.realized < self.var99
    }

    pub fn rlf95(&self) -> f64 {
        rlf(self.var95, self.realized)
    }

    pub fn rlf99(&self) -> f64 {
        rlf(self.var99, self.realized)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestReport {
    pub forecaster: String,
    pub days: Vec<BacktestDay>,
    /// Test days skipped for lack of history.
    pub skipped: usize,
    pub warmup: usize,
}

impl BacktestReport {
    fn mean(&self, f: impl Fn(&BacktestDay) -> f64) -> f64 {
        if self.days.is_empty() {
            return f64::NAN;
        }
        self.days.iter().map(f).sum::<f64>() / self.days.len() as f64
    }

    pub fn rlf95(&self) -> f64 {
        self.mean(BacktestDay::rlf95)
    }

    pub fn rlf99(&self) -> f64 {
        self.mean(BacktestDay::rlf99)
    }

    /// Breaches per 100 evaluated days.
    pub fn breaches95(&self) -> f64 {
        100.0 * self.mean(|d| f64::from(u8::from(d.breach95())))
    }

    pub fn breaches99(&self) -> f64 {
        100.0 * self.mean(|d| f64::from(u8::from(d.breach99())))
    }

    /// One row per evaluated day.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "index", "realized", "var95", "var99", "breach95", "breach99", "rlf95", "rlf99",
        ])?;
        for d in &self.days {
            w.write_record([
                d.index.to_string(),
                format_number(d.realized),
                format_number(d.var95),
                format_number(d.var99),
                u8::from(d.breach95()).to_string(),
                u8::from(d.breach99()).to_string(),
                format_number(d.rlf95()),
                format_number(d.rlf99()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Single-row aggregate summary.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["forecaster", "days", "skipped", "warmup", "RLF95", "RLF99", "Br95", "Br99"])?;
        w.write_record([
            self.forecaster.clone(),
            self.days.len().to_string(),
            self.skipped.to_string(),
            self.warmup.to_string(),
            format_number(self.rlf95()),
            format_number(self.rlf99()),
            format_number(self.breaches95()),
            format_number(self.breaches99()),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Walks days `test_start .. T` of the log-return matrix in order, asking
/// the forecaster for VaR from the rows before each day and scoring it
/// against that day's equally weighted simple portfolio return. Days with
/// less history than the forecaster's warmup are skipped.
pub fn backtest(
    forecaster: &mut dyn Forecaster,
    returns: ArrayView2<f64>,
    test_start: usize,
    rng: &mut dyn RngCore,
) -> Result<BacktestReport> {
    let t_total = returns.nrows();
    if test_start >= t_total {
        return Err(invalid(format!(
            "test start {test_start} is past the last of {t_total} rows"
        )));
    }
    let realized = portfolio_returns(&returns.to_owned());
    let warmup = forecaster.warmup();
    let mut days = Vec::with_capacity(t_total - test_start);
    let mut skipped = 0;
    for t in test_start..t_total {
        if t < warmup {
            skipped += 1;
            continue;
        }
        let v = forecaster
            .value_at_risk(t, returns.slice(s![..t, ..]), rng)
            .map_err(|e| prefix_day(e, t))?;
        days.push(BacktestDay {
            index: t,
            realized: realized[t],
            var95: v.var95,
            var99: v.var99,
        });
    }
    if skipped > 0 {
        log::warn!(
            "{}: skipped {skipped} test days with less than {warmup} rows of history",
            forecaster.name()
        );
    }
    Ok(BacktestReport {
        forecaster: forecaster.name().to_string(),
        days,
        skipped,
        warmup,
    })
}

fn prefix_day(e: Error, t: usize) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("day {t}: {m}")),
        Error::NonFinite(m) => Error::NonFinite(format!("day {t}: {m}")),
        Error::Singular(m) => Error::Singular(format!("day {t}: {m}")),
        other => other,
    }
}

/// Mean sample-based scores over the evaluated days. `nll` is `None` when
/// some day's empirical covariance was singular.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreSummary {
    pub days: usize,
    pub nll: Option<f64>,
    pub diagonal_nll: f64,
    pub portfolio_nll: f64,
}

/// Scores one-step predictive samples on every `stride`-th day of
/// `test_start .. T`. Forecasts and realized vectors are compared as simple
/// returns.
pub fn score_forecasts(
    sampler: &mut dyn ReturnSampler,
    returns: ArrayView2<f64>,
    test_start: usize,
    n_samples: usize,
    stride: usize,
    rng: &mut dyn RngCore,
) -> Result<ScoreSummary> {
    if stride == 0 {
        return Err(invalid("stride must be positive"));
    }
    let t_total = returns.nrows();
    let first = test_start.max(sampler.warmup());
    if first >= t_total {
        return Err(invalid("no test day has enough history"));
    }
    let simple = nonlog_transform(&returns.to_owned());
    let (mut full, mut diag, mut port) = (Some(0.0), 0.0, 0.0);
    let mut days = 0;
    for t in (first..t_total).step_by(stride) {
        let draws = sampler
            .sample_next(t, returns.slice(s![..t, ..]), n_samples, rng)
            .map_err(|e| prefix_day(e, t))?;
        if draws.ncols() != returns.ncols() {
            return Err(shape(format!(
                "sampler returned {} columns for {}",
                draws.ncols(),
                returns.ncols()
            )));
        }
        let draws = nonlog_transform(&draws);
        let r = simple.row(t);
        full = match (full, nll_full(draws.view(), r)) {
            (Some(acc), Ok(v)) => Some(acc + v),
            (_, Err(Error::Singular(_))) | (None, _) => None,
            (_, Err(e)) => return Err(e),
        };
        diag += nll_diagonal(draws.view(), r).map_err(|e| prefix_day(e, t))?;
        let realized = r.sum() / r.len() as f64;
        port += portfolio_nll(draws.view(), realized).map_err(|e| prefix_day(e, t))?;
        days += 1;
    }
    let n = days as f64;
    Ok(ScoreSummary {
        days,
        nll: full.map(|v| v / n),
        diagonal_nll: diag / n,
        portfolio_nll: port / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Constant(f64);

    impl Forecaster for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn warmup(&self) -> usize {
            0
        }
        fn value_at_risk(&mut self, _: usize, _: ArrayView2<f64>, _: &mut dyn RngCore) -> Result<VarPair> {
            Ok(VarPair {
                var95: self.0,
                var99: self.0,
            })
        }
    }

    fn noise(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, d), |_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.01 * e
        })
    }

    #[test]
    fn far_negative_var_never_breaches() {
        let r = noise(300, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = backtest(&mut Constant(-1e9), r.view(), 100, &mut rng).unwrap();
        assert_eq!(rep.days.len(), 200);
        assert_eq!(rep.breaches95(), 0.0);
        assert_eq!(rep.rlf95(), 0.0);
        assert_eq!(rep.rlf99(), 0.0);
    }

    #[test]
    fn insufficient_history_is_skipped() {
        let r = noise(400, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = backtest(&mut HistoricalSimulation::default(), r.view(), 100, &mut rng).unwrap();
        assert_eq!(rep.skipped, 80);
        assert_eq!(rep.days.len(), 220);
        assert_eq!(rep.days[0].index, 180);
    }

    #[test]
    fn report_csvs() {
        let r = noise(60, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rep = backtest(&mut Constant(0.0), r.view(), 10, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        rep.write_csv(&dir.path().join("days.csv")).unwrap();
        rep.write_summary_csv(&dir.path().join("summary.csv")).unwrap();
        let days = std::fs::read_to_string(dir.path().join("days.csv")).unwrap();
        assert_eq!(days.lines().count(), 51);
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let header = summary.lines().next().unwrap();
        for col in ["RLF95", "RLF99", "Br95", "Br99"] {
            assert!(header.split(',').any(|c| c == col));
        }
    }
}
