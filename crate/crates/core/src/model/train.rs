use std::fs;
use std::path::Path;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{config::parse_kv, elbo::Noise, TempVae};
use crate::data::{format_number, WindowBatch};
use crate::error::{invalid, Error, Result};
use crate::nn::{checkpoint, AdamState};

/// Averages over the training windows of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
    pub learning_rate: f64,
}

/// Optimizer progress that must survive a restart.
#[derive(Clone, Debug)]
pub struct TrainingState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub adam: AdamState,
    pub metrics: Vec<EpochMetrics>,
}

/// Mini-batch trainer. Epoch `e` draws its shuffle, dropout masks and latent
/// noise from ChaCha stream `e` of `seed`, so a run resumed from a
/// checkpoint continues exactly as an uninterrupted one.
pub struct Trainer {
    pub model: TempVae,
    pub state: TrainingState,
    pub seed: u64,
}

impl Trainer {
    pub fn new(model: TempVae, seed: u64) -> Self {
        let c = &model.config;
        let adam = AdamState::new(&model.store, c.learning_rate, c.lr_decay_rate, c.lr_decay_steps);
        Self {
            model,
            state: TrainingState {
                epoch: 0,
                adam,
                metrics: Vec::new(),
            },
            seed,
        }
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        rng
    }

    /// One pass over the training windows in shuffled batches.
    pub fn run_epoch(&mut self, data: &WindowBatch) -> Result<EpochMetrics> {
        let c = self.model.config.clone();
        if data.dim() != c.d || data.window_len() != c.window_len {
            return Err(invalid(format!(
                "data has windows {}×{}, model expects {}×{}",
                data.window_len(),
                data.dim(),
                c.window_len,
                c.d
            )));
        }
        if data.n_train == 0 {
            return Err(invalid("no training windows"));
        }
        let epoch = self.state.epoch;
        let beta = c.beta_at_epoch(epoch);
        let learning_rate = self.state.adam.current_lr();
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = data.train_indices().collect();
        order.shuffle(&mut rng);

        let mut sums = [0.0; 3];
        for (i, idx) in order.chunks(c.batch_size).enumerate() {
            let batch = data.windows.select(Axis(0), idx);
            let noise = Noise::sample(&self.model, idx.len(), true, &mut rng)?;
            let (parts, grads) = self
                .model
                .elbo_batch(batch.view(), &noise, beta)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("epoch {epoch}, batch {i}: {msg}"))
                    }
                    other => other,
                })?;
            self.state
                .adam
                .update(&mut self.model.store, &grads)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("epoch {epoch}, batch {i}: {msg}"))
                    }
                    other => other,
                })?;
            let w = idx.len() as f64;
            sums[0] += w * (parts.recon + beta * parts.kl + parts.l2);
            sums[1] += w * parts.recon;
            sums[2] += w * parts.kl;
        }
        let n = order.len() as f64;
        let metrics = EpochMetrics {
            epoch,
            loss: sums[0] / n,
            recon: sums[1] / n,
            kl: sums[2] / n,
            beta,
            learning_rate,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} recon {:.4} kl {:.4} beta {beta:.4}",
            metrics.loss,
            metrics.recon,
            metrics.kl
        );
        self.state.metrics.push(metrics);
        self.state.epoch += 1;
        Ok(metrics)
    }

    /// Trains until `total_epochs` epochs have completed, calling
    /// `on_epoch` after each.
    pub fn train_until<F>(&mut self, data: &WindowBatch, total_epochs: usize, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Self, &EpochMetrics) -> Result<()>,
    {
        while self.state.epoch < total_epochs {
            let m = self.run_epoch(data)?;
            on_epoch(self, &m)?;
        }
        Ok(())
    }

    /// Model, optimizer moments, progress counters and metrics.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        let (first, second) = self.state.adam.moments();
        let names: Vec<String> = self.model.store.iter().map(|(_, p)| p.name.clone()).collect();
        let mut arrays = Vec::with_capacity(2 * names.len());
        for (name, a) in names.iter().zip(first) {
            arrays.push((format!("m/{name}"), a));
        }
        for (name, a) in names.iter().zip(second) {
            arrays.push((format!("v/{name}"), a));
        }
        checkpoint::write_arrays(&dir.join("optimizer"), &arrays)?;
        fs::write(
            dir.join("state.txt"),
            format!(
                "epoch={}\nstep={}\nseed={}\n",
                self.state.epoch, self.state.adam.step, self.seed
            ),
        )?;
        write_metrics_csv(&dir.join("metrics.csv"), &self.state.metrics)
    }

    /// Restores a trainer written by [`Trainer::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let model = TempVae::load(dir)?;
        let text = fs::read_to_string(dir.join("state.txt"))?;
        let kv = parse_kv(&text)?;
        let field = |k: &str| -> Result<u64> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("state.txt lacks a valid `{k}`")))
        };
        let (epoch, step, seed) = (field("epoch")?, field("step")?, field("seed")?);
        let mut trainer = Self::new(model, seed);
        let arrays = checkpoint::read_arrays(&dir.join("optimizer"))?;
        let n = trainer.model.store.len();
        if arrays.len() != 2 * n {
            return Err(Error::Checkpoint("optimizer state does not match model".into()));
        }
        let mut it = arrays.into_iter().map(|(_, a)| a);
        let first: Vec<_> = it.by_ref().take(n).collect();
        let second: Vec<_> = it.collect();
        trainer.state.adam.restore_moments(first, second, step)?;
        trainer.state.epoch = epoch as usize;
        trainer.state.metrics = read_metrics_csv(&dir.join("metrics.csv"))?;
        Ok(trainer)
    }
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "recon", "kl", "beta", "learning_rate"])?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            format_number(m.loss),
            format_number(m.recon),
            format_number(m.kl),
            format_number(m.beta),
            format_number(m.learning_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Parse {
            line: i + 2,
            msg: format!("{}: malformed metrics row", path.display()),
        };
        let f = |j: usize| rec.get(j).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
        out.push(EpochMetrics {
            epoch: rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            loss: f(1)?,
            recon: f(2)?,
            kl: f(3)?,
            beta: f(4)?,
            learning_rate: f(5)?,
        });
    }
    Ok(out)
}
