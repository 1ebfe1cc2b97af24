use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use tempvae::evaluation::BacktestReport;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

/// Line plot of realized portfolio returns against both VaR paths.
pub fn write_backtest_svg(report: &BacktestReport, path: &Path) -> Result<()> {
    let days = &report.days;
    let series: [(&str, &str, Vec<f64>); 3] = [
        ("realized", "#888888", days.iter().map(|d| d.realized).collect()),
        ("VaR95", "#1f77b4", days.iter().map(|d| d.var95).collect()),
        ("VaR99", "#d62728", days.iter().map(|d| d.var99).collect()),
    ];
    let (lo, hi) = series
        .iter()
        .flat_map(|(_, _, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let n = days.len().max(2) - 1;
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / n as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(
        s,
        r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        report.forecaster
    )?;
    for (i, (label, color, values)) in series.iter().enumerate() {
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", x(t), y(v)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            points.join(" ")
        )?;
        writeln!(
            s,
            r#"<text x="{}" y="20" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>"#,
            WIDTH - MARGIN - 80.0 * (3 - i) as f64
        )?;
    }
    writeln!(s, "</svg>")?;
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}
