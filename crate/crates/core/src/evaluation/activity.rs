use std::path::Path;

use ndarray::{s, Array2, ArrayView3, Axis};
use rand::Rng;

use crate::data::format_number;
use crate::error::{invalid, shape, Error, Result};
use crate::model::TempVae;

/// Cells below this value carry no information from the input.
pub const INACTIVE_THRESHOLD: f64 = 0.01;
/// Cells at or above this value count as active in [`avg_active_count`].
pub const ACTIVE_THRESHOLD: f64 = 0.02;

/// `M × κ` grid of activity values.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivityMatrix {
    pub values: Array2<f64>,
}

impl ActivityMatrix {
    pub fn is_inactive(&self, m: usize, k: usize) -> bool {
        self.values[[m, k]] < INACTIVE_THRESHOLD
    }

    /// Number of latent columns at or above the active threshold at each
    /// time step.
    pub fn active_per_step(&self) -> Vec<usize> {
        self.values
            .rows()
            .into_iter()
            .map(|r| r.iter().filter(|&&v| v >= ACTIVE_THRESHOLD).count())
            .collect()
    }

    /// Heatmap grid: one row per time step, one column per latent.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["step".to_string()];
        header.extend((0..self.values.ncols()).map(|k| format!("z{k}")));
        w.write_record(&header)?;
        for (m, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![m.to_string()];
            rec.extend(row.iter().map(|&v| format_number(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Windows encoded per rollout call.
const CHUNK: usize = 1024;

/// Variance across windows of the posterior mean minus the prior mean at
/// every `(step, latent)` cell. Each window gets one latent chain sampled
/// from the posterior, and both means are evaluated on that chain.
/// `n_eval` evaluates a random subset of that many windows instead of all.
pub fn activity_statistic<R: Rng + ?Sized>(
    model: &TempVae,
    windows: ArrayView3<f64>,
    n_eval: Option<usize>,
    rng: &mut R,
) -> Result<ActivityMatrix> {
    if !model.store.all_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let (d, k) = (model.config.d, model.config.latent_dim);
    if windows.dim().1 != model.config.window_len || windows.dim().2 != d {
        return Err(shape(format!(
            "windows are {}×{}, model expects {}×{d}",
            windows.dim().1,
            windows.dim().2,
            model.config.window_len
        )));
    }
    let subset;
    let windows = match n_eval {
        Some(n) if n < windows.dim().0 => {
            let mut idx = rand::seq::index::sample(rng, windows.dim().0, n).into_vec();
            idx.sort_unstable();
            subset = windows.select(Axis(0), &idx);
            subset.view()
        }
        _ => windows,
    };
    let (n, m, _) = windows.dim();
    if n < 2 {
        return Err(invalid("activity needs at least two windows"));
    }
    let mut sum = Array2::<f64>::zeros((m, k));
    let mut sum_sq = Array2::<f64>::zeros((m, k));
    let mut start = 0;
    // Shifting by the first chunk's mean keeps the one-pass variance stable.
    let mut shift: Option<Array2<f64>> = None;
    while start < n {
        let end = (start + CHUNK).min(n);
        let path = model.rollout(windows.slice(s![start..end, .., ..]), None, rng)?;
        let diff = &path.q_mean - &path.p_mean;
        let shift = shift.get_or_insert_with(|| diff.mean_axis(Axis(0)).expect("nonempty"));
        for w in diff.outer_iter() {
            let centered = &w - &*shift;
            sum += &centered;
            sum_sq += &centered.mapv(|v| v * v);
        }
        start = end;
    }
    let nf = n as f64;
    let values = (&sum_sq - &(&sum * &sum / nf)) / (nf - 1.0);
    Ok(ActivityMatrix {
        values: values.mapv(|v| v.max(0.0)),
    })
}

/// Percentage of cells at or above [`ACTIVE_THRESHOLD`].
pub fn avg_active_count(a: &ActivityMatrix) -> f64 {
    if a.values.is_empty() {
        return 0.0;
    }
    let active = a.values.iter().filter(|&&v| v >= ACTIVE_THRESHOLD).count();
    100.0 * active as f64 / a.values.len() as f64
}
