//! The temporal VAE: a frozen random prior over latent paths, a recurrent
//! decoder with a rank-1 Gaussian head, and a bidirectional recurrent
//! encoder.

mod config;
mod elbo;
mod infer;
mod train;

pub use config::{parse_kv, ModelConfig, Variants};
pub use elbo::{ElboParts, Noise};
pub use infer::{LatentPath, PathBatch};
pub use train::{read_metrics_csv, write_metrics_csv, EpochMetrics, Trainer, TrainingState};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{checkpoint, GruCell, Mlp, ParamStore};

/// Parameters and layer handles of a model.
#[derive(Clone, Debug)]
pub struct TempVae {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub prior_rnn: GruCell,
    pub prior_mlp: Mlp,
    pub decoder_rnn: GruCell,
    pub decoder_mlp: Mlp,
    /// Absent for the backward-only encoder.
    pub encoder_forward: Option<GruCell>,
    pub encoder_backward: GruCell,
    pub encoder_rnn: GruCell,
    pub encoder_mlp: Mlp,
}

/// Column offsets of the decoder output layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLayout {
    pub log_std: usize,
    pub mean: Option<usize>,
    pub perturb: Option<usize>,
    pub width: usize,
}

impl DecoderLayout {
    fn new(config: &ModelConfig) -> Self {
        let d = config.d;
        let mut width = d;
        let mean = (!config.variants.zero_mean_decoder).then(|| {
            width += d;
            width - d
        });
        let perturb = (!config.variants.diag_decoder_cov).then(|| {
            width += d;
            width - d
        });
        Self {
            log_std: 0,
            mean,
            perturb,
            width,
        }
    }
}

impl TempVae {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let v = c.variants;
        let (d, k, h, hp) = (c.d, c.latent_dim, c.rnn_dim, c.prior_rnn_dim);
        let hidden = c.mlp_hidden;
        let mut store = ParamStore::new();

        let prior_rnn = GruCell::new(&mut store, "prior/rnn", k, hp, v.trainable_prior, rng)?;
        let prior_mlp = Mlp::new(&mut store, "prior/mlp", hp, &hidden, 2 * k, v.trainable_prior, rng)?;

        let dec_in = if v.ar_decoder { k + d } else { k };
        let decoder_rnn = GruCell::new(&mut store, "decoder/rnn", dec_in, h, true, rng)?;
        let layout = DecoderLayout::new(c);
        let decoder_mlp = Mlp::new(&mut store, "decoder/mlp", h, &hidden, layout.width, true, rng)?;

        let encoder_forward = if v.backward_only_encoder {
            None
        } else {
            Some(GruCell::new(&mut store, "encoder/forward", d, h, true, rng)?)
        };
        let encoder_backward = GruCell::new(&mut store, "encoder/backward", d, h, true, rng)?;
        let features = if v.backward_only_encoder { h } else { 2 * h };
        let encoder_rnn = GruCell::new(&mut store, "encoder/rnn", k + features, h, true, rng)?;
        let encoder_mlp = Mlp::new(&mut store, "encoder/mlp", h, &hidden, 2 * k, true, rng)?;

        Ok(Self {
            config,
            store,
            prior_rnn,
            prior_mlp,
            decoder_rnn,
            decoder_mlp,
            encoder_forward,
            encoder_backward,
            encoder_rnn,
            encoder_mlp,
        })
    }

    pub fn decoder_layout(&self) -> DecoderLayout {
        DecoderLayout::new(&self.config)
    }

    /// Recurrences that receive dropout during training.
    fn trainable_cells(&self) -> Vec<GruCell> {
        let mut cells: Vec<GruCell> = self.encoder_forward.into_iter().collect();
        cells.extend([self.encoder_backward, self.encoder_rnn, self.decoder_rnn]);
        if self.config.variants.trainable_prior {
            cells.push(self.prior_rnn);
        }
        cells
    }

    /// Writes `config.txt` and `params.{bin,manifest}` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), self.config.to_kv())?;
        checkpoint::save_params(&self.store, &dir.join("params"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("config.txt")).map_err(|e| {
            Error::Checkpoint(format!("cannot read {}: {e}", dir.join("config.txt").display()))
        })?;
        let config = ModelConfig::from_kv(&text)?;
        // Initialization values are overwritten by the checkpoint.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng)?;
        checkpoint::load_params(&mut model.store, &dir.join("params"))?;
        if !model.store.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(model)
    }
}
