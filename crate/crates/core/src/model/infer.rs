use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::TempVae;
use crate::error::{invalid, shape, Error, Result};
use crate::gaussians::{GaussianDiag, GaussianRank1};

/// One encoded window: sampled latents and the per-step posterior and
/// prior distributions evaluated on that latent history.
#[derive(Clone, Debug)]
pub struct LatentPath {
    /// `M × κ`.
    pub z: Array2<f64>,
    pub posterior: Vec<GaussianDiag>,
    pub prior: Vec<GaussianDiag>,
}

/// Batched counterpart of [`LatentPath`]; every array is `B × M × κ`.
#[derive(Clone, Debug)]
pub struct PathBatch {
    pub z: Array3<f64>,
    pub q_mean: Array3<f64>,
    pub q_std: Array3<f64>,
    pub p_mean: Array3<f64>,
    pub p_std: Array3<f64>,
}

/// Decoder output for a batch.
struct DecoderOut {
    mean: Array2<f64>,
    std: Array2<f64>,
    perturb: Option<Array2<f64>>,
}

fn randn<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Column concatenation where single-row parts are repeated to `rows`.
fn hcat(parts: &[ArrayView2<f64>], rows: usize) -> Array2<f64> {
    let width = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Array2::zeros((rows, width));
    let mut start = 0;
    for p in parts {
        let mut dst = out.slice_mut(s![.., start..start + p.ncols()]);
        if p.nrows() == rows {
            dst.assign(p);
        } else {
            dst.assign(&p.broadcast((rows, p.ncols())).expect("single-row part"));
        }
        start += p.ncols();
    }
    out
}

fn row_view(x: &[f64]) -> Result<ArrayView2<'_, f64>> {
    ArrayView2::from_shape((1, x.len()), x).map_err(|e| shape(e.to_string()))
}

impl TempVae {
    /// Encoder features per step, `B × F`: forward and backward recurrence
    /// states over the window (backward only for that variant).
    fn encoder_features(&self, xs: &[ArrayView2<f64>]) -> Result<Vec<Array2<f64>>> {
        let h = self.config.rnn_dim;
        let b = xs.first().map_or(0, |x| x.nrows());
        let mut backward = vec![Array2::zeros((0, 0)); xs.len()];
        let mut state = Array2::zeros((b, h));
        for t in (0..xs.len()).rev() {
            state = self.encoder_backward.forward(&self.store, xs[t], state.view(), None)?;
            backward[t] = state.clone();
        }
        let Some(cell) = &self.encoder_forward else {
            return Ok(backward);
        };
        let mut state = Array2::zeros((b, h));
        let mut out = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate() {
            state = cell.forward(&self.store, *x, state.view(), None)?;
            out.push(hcat(&[state.view(), backward[t].view()], b));
        }
        Ok(out)
    }

    /// Posterior mean and std for one step; `std` is zero for the
    /// deterministic bottleneck.
    fn posterior_step(
        &self,
        h_prev: ArrayView2<f64>,
        z_prev: ArrayView2<f64>,
        features: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let rows = z_prev.nrows();
        let input = hcat(&[z_prev, features], rows);
        let h = self.encoder_rnn.forward(&self.store, input.view(), h_prev, None)?;
        let out = self.encoder_mlp.forward(&self.store, h.view())?;
        let k = self.config.latent_dim;
        let mean = out.slice(s![.., ..k]).to_owned();
        let std = if self.config.variants.deterministic_bottleneck {
            Array2::zeros(mean.raw_dim())
        } else {
            out.slice(s![.., k..]).mapv(f64::exp)
        };
        Ok((mean, std, h))
    }

    fn prior_batch(
        &self,
        h_prev: ArrayView2<f64>,
        z_prev: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let h = self.prior_rnn.forward(&self.store, z_prev, h_prev, None)?;
        let out = self.prior_mlp.forward(&self.store, h.view())?;
        let k = self.config.latent_dim;
        Ok((
            out.slice(s![.., ..k]).to_owned(),
            out.slice(s![.., k..]).mapv(f64::exp),
            h,
        ))
    }

    fn decoder_state(
        &self,
        h_prev: ArrayView2<f64>,
        z: ArrayView2<f64>,
        r_prev: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        let input = match r_prev {
            Some(r) => hcat(&[z, r], z.nrows()),
            None => z.to_owned(),
        };
        self.decoder_rnn.forward(&self.store, input.view(), h_prev, None)
    }

    fn decoder_head(&self, h: ArrayView2<f64>) -> Result<DecoderOut> {
        let out = self.decoder_mlp.forward(&self.store, h)?;
        let layout = self.decoder_layout();
        let d = self.config.d;
        let cols = |off: usize| out.slice(s![.., off..off + d]).to_owned();
        Ok(DecoderOut {
            mean: layout
                .mean
                .map_or_else(|| Array2::zeros((out.nrows(), d)), cols),
            std: cols(layout.log_std).mapv(f64::exp),
            perturb: layout.perturb.map(cols),
        })
    }

    fn sample_decoder<R: Rng + ?Sized>(&self, out: &DecoderOut, rng: &mut R) -> Array2<f64> {
        let (n, d) = out.mean.dim();
        let mut r = &out.mean + &(&out.std * &randn(rng, n, d));
        if let Some(u) = &out.perturb {
            let shared = randn(rng, n, 1);
            r += &(u * &shared);
        }
        r
    }

    fn check_r_prev(&self, present: bool) -> Result<()> {
        if present != self.config.variants.ar_decoder {
            return Err(invalid(if present {
                "previous observation given to a decoder without the autoregressive input"
            } else {
                "autoregressive decoder needs the previous observation"
            }));
        }
        Ok(())
    }

    /// Prior distribution of the next latent and the next prior state.
    pub fn prior_step(&self, h_prev: &[f64], z_prev: &[f64]) -> Result<(GaussianDiag, Vec<f64>)> {
        let (mean, std, h) = self.prior_batch(row_view(h_prev)?, row_view(z_prev)?)?;
        Ok((
            GaussianDiag::new(mean.row(0).to_vec(), std.row(0).to_vec())?,
            h.row(0).to_vec(),
        ))
    }

    /// Observation distribution for latent `z_t` and the next decoder
    /// state. `r_prev` must be given exactly when the decoder is
    /// autoregressive.
    pub fn decode_step(
        &self,
        h_prev: &[f64],
        z_t: &[f64],
        r_prev: Option<&[f64]>,
    ) -> Result<(GaussianRank1, Vec<f64>)> {
        self.check_r_prev(r_prev.is_some())?;
        let r_view = r_prev.map(row_view).transpose()?;
        let h = self.decoder_state(row_view(h_prev)?, row_view(z_t)?, r_view)?;
        let out = self.decoder_head(h.view())?;
        let perturb = out
            .perturb
            .as_ref()
            .map_or_else(|| vec![0.0; self.config.d], |u| u.row(0).to_vec());
        Ok((
            GaussianRank1::new(out.mean.row(0).to_vec(), out.std.row(0).to_vec(), perturb)?,
            h.row(0).to_vec(),
        ))
    }

    /// Encodes a batch of windows (`B × M × d`) with dropout off. Latent
    /// noise comes from `eps` (one `B × κ` array per step) or, if absent,
    /// from `rng` step by step.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        windows: ArrayView3<f64>,
        eps: Option<&[Array2<f64>]>,
        rng: &mut R,
    ) -> Result<PathBatch> {
        let (b, m, d) = windows.dim();
        if d != self.config.d {
            return Err(shape(format!("windows have {d} columns, model expects {}", self.config.d)));
        }
        if windows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window contains non-finite returns".into()));
        }
        let k = self.config.latent_dim;
        if let Some(e) = eps {
            if e.len() < m || e.iter().take(m).any(|a| a.dim() != (b, k)) {
                return Err(shape("latent noise does not match batch and window length"));
            }
        }
        let xs: Vec<_> = (0..m).map(|t| windows.index_axis(Axis(1), t)).collect();
        let features = self.encoder_features(&xs)?;
        let mut out = PathBatch {
            z: Array3::zeros((b, m, k)),
            q_mean: Array3::zeros((b, m, k)),
            q_std: Array3::zeros((b, m, k)),
            p_mean: Array3::zeros((b, m, k)),
            p_std: Array3::zeros((b, m, k)),
        };
        let mut z_prev = Array2::zeros((b, k));
        let mut h_enc = Array2::zeros((b, self.config.rnn_dim));
        let mut h_prior = Array2::zeros((b, self.config.prior_rnn_dim));
        for t in 0..m {
            let (q_mean, q_std, h) =
                self.posterior_step(h_enc.view(), z_prev.view(), features[t].view())?;
            h_enc = h;
            let (p_mean, p_std, h) = self.prior_batch(h_prior.view(), z_prev.view())?;
            h_prior = h;
            let noise = match eps {
                Some(e) => e[t].clone(),
                None => randn(rng, b, k),
            };
            let z = &q_mean + &(&q_std * &noise);
            for (dst, src) in [
                (&mut out.z, &z),
                (&mut out.q_mean, &q_mean),
                (&mut out.q_std, &q_std),
                (&mut out.p_mean, &p_mean),
                (&mut out.p_std, &p_std),
            ] {
                dst.index_axis_mut(Axis(1), t).assign(src);
            }
            z_prev = z;
        }
        Ok(out)
    }

    /// Samples a latent path for one window and records the per-step
    /// posterior and prior.
    pub fn encode_sequence<R: Rng + ?Sized>(
        &self,
        r: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<LatentPath> {
        let batch = self.rollout(r.insert_axis(Axis(0)), None, rng)?;
        let m = r.nrows();
        let diag = |mean: &Array3<f64>, std: &Array3<f64>| -> Result<Vec<GaussianDiag>> {
            (0..m)
                .map(|t| {
                    GaussianDiag::new(
                        mean.slice(s![0, t, ..]).to_vec(),
                        std.slice(s![0, t, ..]).to_vec(),
                    )
                })
                .collect()
        };
        Ok(LatentPath {
            z: batch.z.index_axis(Axis(0), 0).to_owned(),
            posterior: diag(&batch.q_mean, &batch.q_std)?,
            prior: diag(&batch.p_mean, &batch.p_std)?,
        })
    }

    /// Draws `n_samples` standardized next-step returns given the last
    /// `M - 1` rows of `history`: the history is encoded into a latent
    /// path, the prior is advanced one step and the decoder sampled.
    pub fn forecast_next<R: Rng + ?Sized>(
        &self,
        history: ArrayView2<f64>,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Array2<f64>> {
        let m = self.config.window_len;
        let (k, d) = (self.config.latent_dim, self.config.d);
        if n_samples == 0 {
            return Err(invalid("need at least one sample"));
        }
        if history.ncols() != d {
            return Err(shape(format!("history has {} columns, model expects {d}", history.ncols())));
        }
        if history.nrows() < m - 1 {
            return Err(invalid(format!(
                "history has {} rows, need at least {}",
                history.nrows(),
                m - 1
            )));
        }
        let hist = history.slice(s![history.nrows() - (m - 1).., ..]);
        if hist.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("history contains non-finite returns".into()));
        }
        let ar = self.config.variants.ar_decoder;
        let xs: Vec<_> = hist.rows().into_iter().map(|r| r.insert_axis(Axis(0))).collect();
        let features = self.encoder_features(&xs)?;

        let n = n_samples;
        let zero_r = Array2::zeros((1, d));
        let mut z_prev = Array2::zeros((n, k));
        let mut h_enc = Array2::zeros((n, self.config.rnn_dim));
        let mut h_prior = Array2::zeros((n, self.config.prior_rnn_dim));
        let mut h_dec = Array2::zeros((n, self.config.rnn_dim));
        for t in 0..m - 1 {
            let (q_mean, q_std, h) =
                self.posterior_step(h_enc.view(), z_prev.view(), features[t].view())?;
            h_enc = h;
            let z = &q_mean + &(&q_std * &randn(rng, n, k));
            h_prior = self.prior_rnn.forward(&self.store, z_prev.view(), h_prior.view(), None)?;
            let r_prev = ar.then(|| if t == 0 { zero_r.view() } else { xs[t - 1] });
            h_dec = self.decoder_state(h_dec.view(), z.view(), r_prev)?;
            z_prev = z;
        }
        let (p_mean, p_std, _) = self.prior_batch(h_prior.view(), z_prev.view())?;
        let z = &p_mean + &(&p_std * &randn(rng, n, k));
        let r_prev = ar.then(|| if m >= 2 { xs[m - 2] } else { zero_r.view() });
        let h = self.decoder_state(h_dec.view(), z.view(), r_prev)?;
        let out = self.decoder_head(h.view())?;
        Ok(self.sample_decoder(&out, rng))
    }

    /// Ancestral samples of `n_paths` standardized return paths of length
    /// `m`, shape `n_paths × m × d`.
    pub fn generate<R: Rng + ?Sized>(&self, m: usize, n_paths: usize, rng: &mut R) -> Result<Array3<f64>> {
        let (k, d) = (self.config.latent_dim, self.config.d);
        let n = n_paths;
        let mut paths = Array3::zeros((n, m, d));
        let mut z_prev = Array2::zeros((n, k));
        let mut r_prev = Array2::zeros((n, d));
        let mut h_prior = Array2::zeros((n, self.config.prior_rnn_dim));
        let mut h_dec = Array2::zeros((n, self.config.rnn_dim));
        let ar = self.config.variants.ar_decoder;
        for t in 0..m {
            let (p_mean, p_std, h) = self.prior_batch(h_prior.view(), z_prev.view())?;
            h_prior = h;
            let z = &p_mean + &(&p_std * &randn(rng, n, k));
            h_dec = self.decoder_state(h_dec.view(), z.view(), ar.then(|| r_prev.view()))?;
            let out = self.decoder_head(h_dec.view())?;
            let r = self.sample_decoder(&out, rng);
            paths.index_axis_mut(Axis(1), t).assign(&r);
            r_prev = r;
            z_prev = z;
        }
        Ok(paths)
    }
}
