use std::rc::Rc;

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::TempVae;
use crate::error::{invalid, shape, Error, Result};
use crate::nn::{add_l2_grad, l2_penalty, GruCell, GruMasks, Grads, NodeId, Tape};

/// Per-window averages of the loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboParts {
    /// `recon + beta * kl + l2`.
    pub loss: f64,
    /// Negative log-likelihood of the window under the decoder.
    pub recon: f64,
    /// Sum over steps of the closed-form KL to the prior.
    pub kl: f64,
    pub l2: f64,
}

/// Everything random in one loss evaluation: reparameterization noise per
/// step and, in training mode, one dropout mask set per recurrence.
#[derive(Clone, Debug)]
pub struct Noise {
    /// Standard normal draws per step, each `B × κ`.
    pub eps: Vec<Array2<f64>>,
    masks: Vec<(GruCell, Rc<GruMasks>)>,
}

impl Noise {
    /// Draws masks (training mode with a positive dropout rate only), then
    /// the latent noise step by step.
    pub fn sample<R: Rng + ?Sized>(
        model: &TempVae,
        batch: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let rate = model.config.effective_dropout();
        let mut masks = Vec::new();
        if training && rate > 0.0 {
            for cell in model.trainable_cells() {
                let m = GruMasks::sample(batch, cell.input_size, cell.hidden_size, rate, rng)?;
                masks.push((cell, Rc::new(m)));
            }
        }
        let k = model.config.latent_dim;
        let eps = (0..model.config.window_len)
            .map(|_| Array2::from_shape_simple_fn((batch, k), || rng.sample(StandardNormal)))
            .collect();
        Ok(Self { eps, masks })
    }

    /// Explicit latent noise and no dropout.
    pub fn from_eps(eps: Vec<Array2<f64>>) -> Self {
        Self {
            eps,
            masks: Vec::new(),
        }
    }

    fn mask(&self, cell: &GruCell) -> Option<Rc<GruMasks>> {
        self.masks
            .iter()
            .find(|(c, _)| c.w_input == cell.w_input)
            .map(|(_, m)| Rc::clone(m))
    }
}

struct Graph {
    nll: Vec<NodeId>,
    kl: Vec<NodeId>,
}

impl TempVae {
    fn build_graph(&self, tape: &mut Tape, batch: ArrayView3<f64>, noise: &Noise) -> Result<Graph> {
        let c = &self.config;
        let v = c.variants;
        let (b, m, d) = batch.dim();
        let (k, h) = (c.latent_dim, c.rnn_dim);
        if d != c.d {
            return Err(shape(format!("windows have {d} columns, model expects {}", c.d)));
        }
        if noise.eps.len() < m || noise.eps.iter().take(m).any(|e| e.dim() != (b, k)) {
            return Err(shape("latent noise does not match batch and window length"));
        }
        let store = &self.store;
        let xs: Vec<NodeId> = (0..m)
            .map(|t| tape.input(batch.index_axis(Axis(1), t).to_owned()))
            .collect();

        let mut forward = Vec::with_capacity(m);
        if let Some(cell) = &self.encoder_forward {
            let mask = noise.mask(cell);
            let mut s = tape.zeros(b, h);
            for &x in &xs {
                s = tape.gru(store, cell, x, s, mask.clone())?;
                forward.push(s);
            }
        }
        let mut backward = vec![xs[0]; m];
        {
            let cell = &self.encoder_backward;
            let mask = noise.mask(cell);
            let mut s = tape.zeros(b, h);
            for t in (0..m).rev() {
                s = tape.gru(store, cell, xs[t], s, mask.clone())?;
                backward[t] = s;
            }
        }

        let enc_mask = noise.mask(&self.encoder_rnn);
        let prior_mask = noise.mask(&self.prior_rnn);
        let dec_mask = noise.mask(&self.decoder_rnn);
        let layout = self.decoder_layout();
        let mut z_prev = tape.zeros(b, k);
        let mut h_enc = tape.zeros(b, h);
        let mut h_prior = tape.zeros(b, c.prior_rnn_dim);
        let mut h_dec = tape.zeros(b, h);
        let mut r_prev = v.ar_decoder.then(|| tape.zeros(b, d));
        let zero_mean = v.zero_mean_decoder.then(|| tape.zeros(b, d));
        let mut graph = Graph {
            nll: Vec::with_capacity(m),
            kl: Vec::with_capacity(m),
        };

        for t in 0..m {
            let mut parts = vec![z_prev];
            if !forward.is_empty() {
                parts.push(forward[t]);
            }
            parts.push(backward[t]);
            let enc_in = tape.concat(&parts)?;
            h_enc = tape.gru(store, &self.encoder_rnn, enc_in, h_enc, enc_mask.clone())?;
            let q = tape.mlp(store, &self.encoder_mlp, h_enc)?;
            let q_mean = tape.slice_cols(q, 0, k)?;

            let z = if v.deterministic_bottleneck {
                q_mean
            } else {
                let q_log_std = tape.slice_cols(q, k, k)?;
                let q_std = tape.exp(q_log_std);
                h_prior = tape.gru(store, &self.prior_rnn, z_prev, h_prior, prior_mask.clone())?;
                let p = tape.mlp(store, &self.prior_mlp, h_prior)?;
                let p_mean = tape.slice_cols(p, 0, k)?;
                let p_log_std = tape.slice_cols(p, k, k)?;
                let p_std = tape.exp(p_log_std);
                graph.kl.push(tape.kl_diag(q_mean, q_std, p_mean, p_std)?);
                tape.reparam(q_mean, q_std, noise.eps[t].clone())?
            };

            let dec_in = match r_prev {
                Some(r) => tape.concat(&[z, r])?,
                None => z,
            };
            h_dec = tape.gru(store, &self.decoder_rnn, dec_in, h_dec, dec_mask.clone())?;
            let o = tape.mlp(store, &self.decoder_mlp, h_dec)?;
            let log_std = tape.slice_cols(o, layout.log_std, d)?;
            let std = tape.exp(log_std);
            let mean = match (layout.mean, zero_mean) {
                (Some(off), _) => tape.slice_cols(o, off, d)?,
                (None, Some(zeros)) => zeros,
                (None, None) => unreachable!("zero-mean decoder always has a zero node"),
            };
            let perturb = layout.perturb.map(|off| tape.slice_cols(o, off, d)).transpose()?;
            let target = tape.value(xs[t]).clone();
            graph.nll.push(tape.gauss_nll(target, mean, std, perturb)?);

            if r_prev.is_some() {
                r_prev = Some(xs[t]);
            }
            z_prev = z;
        }
        Ok(graph)
    }

    fn evaluate(
        &self,
        batch: ArrayView3<f64>,
        noise: &Noise,
        beta: f64,
        with_grads: bool,
    ) -> Result<(ElboParts, Option<Grads>)> {
        if !(beta >= 0.0) {
            return Err(invalid(format!("beta must be nonnegative, got {beta}")));
        }
        let b = batch.len_of(Axis(0));
        if b == 0 {
            return Err(invalid("empty batch"));
        }
        let mut tape = Tape::new();
        let graph = self.build_graph(&mut tape, batch, noise)?;
        let scale = 1.0 / b as f64;
        let recon: f64 = graph.nll.iter().map(|&n| tape.value(n).sum()).sum::<f64>() * scale;
        let kl: f64 = graph.kl.iter().map(|&n| tape.value(n).sum()).sum::<f64>() * scale;
        let lambda = self.config.effective_l2();
        let l2 = l2_penalty(&self.store, lambda)?;
        let parts = ElboParts {
            loss: recon + beta * kl + l2,
            recon,
            kl,
            l2,
        };
        if !parts.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss (reconstruction {recon}, KL {kl})"
            )));
        }
        if !with_grads {
            return Ok((parts, None));
        }
        let mut seeds: Vec<(NodeId, f64)> = graph.nll.iter().map(|&n| (n, scale)).collect();
        seeds.extend(graph.kl.iter().map(|&n| (n, beta * scale)));
        let mut grads = tape.backward(&self.store, &seeds).params;
        add_l2_grad(&self.store, lambda, &mut grads);
        Ok((parts, Some(grads)))
    }

    /// Loss components and parameter gradients for a `B × M × d` batch.
    pub fn elbo_batch(
        &self,
        batch: ArrayView3<f64>,
        noise: &Noise,
        beta: f64,
    ) -> Result<(ElboParts, Grads)> {
        let (parts, grads) = self.evaluate(batch, noise, beta, true)?;
        Ok((parts, grads.expect("requested")))
    }

    /// Loss components without gradients.
    pub fn elbo_value(&self, batch: ArrayView3<f64>, noise: &Noise, beta: f64) -> Result<ElboParts> {
        Ok(self.evaluate(batch, noise, beta, false)?.0)
    }

    /// Single-window loss with one latent path drawn from `rng`, dropout
    /// off.
    pub fn elbo<R: Rng + ?Sized>(&self, r: ArrayView2<f64>, beta: f64, rng: &mut R) -> Result<ElboParts> {
        self.elbo_mc(r, beta, 1, rng)
    }

    /// Single-window loss averaged over `n_samples` latent paths.
    pub fn elbo_mc<R: Rng + ?Sized>(
        &self,
        r: ArrayView2<f64>,
        beta: f64,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<ElboParts> {
        if n_samples == 0 {
            return Err(invalid("need at least one latent sample"));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("window contains non-finite returns".into()));
        }
        let batch = r
            .insert_axis(Axis(0))
            .broadcast((n_samples, r.nrows(), r.ncols()))
            .expect("broadcast over new axis")
            .to_owned();
        let k = self.config.latent_dim;
        let eps = (0..r.nrows())
            .map(|_| Array2::from_shape_simple_fn((n_samples, k), || rng.sample(StandardNormal)))
            .collect();
        self.elbo_value(batch.view(), &Noise::from_eps(eps), beta)
    }
}
