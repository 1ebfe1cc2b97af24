use std::cmp::Ordering;
use std::path::Path;

use ndarray::Array2;

use crate::error::{invalid, Error, Result};

/// Formats a number with 12 significant digits.
pub fn format_number(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.11e}")
    }
}

/// Prices indexed by opaque, strictly increasing date labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    /// `T × d`, strictly positive.
    pub prices: Array2<f64>,
}

/// Log-returns with the same layout as [`PriceSeries`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnSeries {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    pub returns: Array2<f64>,
}

impl PriceSeries {
    /// Log-returns labelled by the later date of each pair.
    pub fn log_returns(&self) -> Result<ReturnSeries> {
        Ok(ReturnSeries {
            dates: self.dates[1..].to_vec(),
            assets: self.assets.clone(),
            returns: super::log_returns(&self.prices)?,
        })
    }
}

impl ReturnSeries {
    /// Labels rows `1..=T` and columns `A1..Ad`.
    pub fn with_default_labels(returns: Array2<f64>) -> Self {
        let width = returns.nrows().to_string().len();
        Self {
            dates: (1..=returns.nrows()).map(|t| format!("{t:0width$}")).collect(),
            assets: (1..=returns.ncols()).map(|j| format!("A{j}")).collect(),
            returns,
        }
    }
}

/// Labels that both parse as numbers compare numerically, everything else
/// lexicographically (ISO dates sort correctly this way).
fn label_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        _ => a.cmp(b),
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty file".into() })??;
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be `date,ASSET1,...` with at least one asset".into(),
        });
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let d = assets.len();
    let mut dates: Vec<String> = Vec::new();
    let mut values = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fail = |msg: String| Error::Parse { line, msg };
        if record.len() != d + 1 {
            return Err(fail(format!("expected {} fields, found {}", d + 1, record.len())));
        }
        let date = record[0].to_string();
        if let Some(prev) = dates.last() {
            if label_order(prev, &date) != Ordering::Less {
                return Err(fail(format!("date `{date}` does not follow `{prev}`")));
            }
        }
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                return Err(fail(format!("missing value for `{}`", assets[j])));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| fail(format!("non-numeric value `{cell}` for `{}`", assets[j])))?;
            if !v.is_finite() {
                return Err(fail(format!("non-finite value `{cell}` for `{}`", assets[j])));
            }
            values.push(v);
        }
        dates.push(date);
    }
    if dates.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no data rows".into() });
    }
    let table = Array2::from_shape_vec((dates.len(), d), values).expect("rows checked");
    Ok((dates, assets, table))
}

fn write_table(path: &Path, dates: &[String], assets: &[String], x: &Array2<f64>) -> Result<()> {
    if dates.len() != x.nrows() || assets.len() != x.ncols() {
        return Err(invalid("labels do not match table shape"));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(assets.iter().cloned());
    w.write_record(&header)?;
    for (date, row) in dates.iter().zip(x.rows()) {
        let mut rec = vec![date.clone()];
        rec.extend(row.iter().map(|&v| format_number(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `date,ASSET1,...` price rows; rejects ragged rows, missing or
/// non-numeric cells, non-positive prices and non-increasing dates.
pub fn load_prices_csv(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let (dates, assets, prices) = read_table(path.as_ref())?;
    if let Some(((row, col), &p)) = prices.indexed_iter().find(|(_, &p)| p <= 0.0) {
        return Err(Error::Parse {
            line: row + 2,
            msg: format!("price {p} for `{}` is not positive", assets[col]),
        });
    }
    Ok(PriceSeries { dates, assets, prices })
}

pub fn write_prices_csv(path: impl AsRef<Path>, series: &PriceSeries) -> Result<()> {
    write_table(path.as_ref(), &series.dates, &series.assets, &series.prices)
}

pub fn load_returns_csv(path: impl AsRef<Path>) -> Result<ReturnSeries> {
    let (dates, assets, returns) = read_table(path.as_ref())?;
    Ok(ReturnSeries { dates, assets, returns })
}

pub fn write_returns_csv(path: impl AsRef<Path>, series: &ReturnSeries) -> Result<()> {
    write_table(path.as_ref(), &series.dates, &series.assets, &series.returns)
}
