#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempvae::gaussians::GaussianDiag;
use tempvae::model::{ModelConfig, Noise, TempVae};

/// Random diagonal Gaussian with means in `[-2, 2]` and std in `[0.3, 2]`.
pub fn random_diag<R: Rng>(dim: usize, rng: &mut R) -> GaussianDiag {
    GaussianDiag {
        mean: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        std: (0..dim).map(|_| rng.random_range(0.3..2.0)).collect(),
    }
}

/// Monte-Carlo estimate of `E_q[ln q − ln p]` and its standard error.
pub fn kl_monte_carlo<R: Rng>(q: &GaussianDiag, p: &GaussianDiag, n: usize, rng: &mut R) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let x = q.sample(rng);
        let v = q.log_pdf(&x).unwrap() - p.log_pdf(&x).unwrap();
        sum += v;
        sum_sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq - nf * mean * mean) / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

pub fn randn<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// The smallest configuration used for exhaustive gradient checks.
pub fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::new(2);
    c.latent_dim = 2;
    c.rnn_dim = 3;
    c.prior_rnn_dim = 3;
    c.mlp_hidden = [3, 3];
    c.window_len = 3;
    c.batch_size = 4;
    c
}

pub fn tiny_batch(b: usize, c: &ModelConfig, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((b, c.window_len, c.d), || randn(&mut rng))
}

pub fn fixed_noise(b: usize, c: &ModelConfig, seed: u64) -> Noise {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Noise::from_eps(
        (0..c.window_len)
            .map(|_| Array2::from_shape_simple_fn((b, c.latent_dim), || randn(&mut rng)))
            .collect(),
    )
}

/// Largest relative error between the analytic ELBO gradient and central
/// finite differences over every trainable parameter entry, with the
/// parameter name and index where it occurs.
pub fn elbo_gradient_error(model: &mut TempVae, batch: &Array3<f64>, noise: &Noise, beta: f64) -> (f64, String) {
    let (_, grads) = model.elbo_batch(batch.view(), noise, beta).unwrap();
    let h = 1e-6;
    let mut worst = (0.0, String::new());
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        if !model.store.is_trainable(id) {
            continue;
        }
        let name = model.store.param(id).name.clone();
        let shape = model.store.value(id).dim();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let orig = model.store.value(id)[[i, j]];
                model.store.value_mut(id)[[i, j]] = orig + h;
                let plus = model.elbo_value(batch.view(), noise, beta).unwrap().loss;
                model.store.value_mut(id)[[i, j]] = orig - h;
                let minus = model.elbo_value(batch.view(), noise, beta).unwrap().loss;
                model.store.value_mut(id)[[i, j]] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let g = grads.get(id)[[i, j]];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
                if rel > worst.0 {
                    worst = (rel, format!("{name}[{i},{j}]: analytic {g}, numeric {fd}"));
                }
            }
        }
    }
    worst
}

/// Moves every bias off zero. Zero-initialized biases put ReLU units whose
/// inputs are all zero exactly on the kink, where finite differences are
/// one-sided.
pub fn jitter_biases(model: &mut TempVae, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| p.name.ends_with("/bias"))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        model
            .store
            .value_mut(id)
            .mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
}
