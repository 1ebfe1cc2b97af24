use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};

/// Architecture switches for the ablation variants. All off is the
/// reference model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Variants {
    /// Train the prior networks instead of keeping them at their random
    /// initialization.
    pub trainable_prior: bool,
    /// Feed the previous observation into the decoder recurrence.
    pub ar_decoder: bool,
    /// Encode with the backward recurrence only.
    pub backward_only_encoder: bool,
    /// Fix the decoder mean at zero.
    pub zero_mean_decoder: bool,
    /// Drop the rank-1 term of the decoder covariance.
    pub diag_decoder_cov: bool,
    /// Use the final β from the first epoch.
    pub no_anneal: bool,
    pub no_dropout: bool,
    pub no_l2: bool,
    /// Zero posterior variance and no KL term.
    pub deterministic_bottleneck: bool,
}

/// Every hyperparameter of a model and its training run.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Observation dimension.
    pub d: usize,
    /// Latent dimension κ.
    pub latent_dim: usize,
    /// Hidden size of the encoder and decoder recurrences.
    pub rnn_dim: usize,
    /// Hidden size of the prior recurrence.
    pub prior_rnn_dim: usize,
    pub mlp_hidden: [usize; 2],
    /// Window length M.
    pub window_len: usize,
    pub beta_final: f64,
    pub beta_decay_rate: f64,
    pub beta_decay_steps: f64,
    pub dropout: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub lr_decay_rate: f64,
    pub lr_decay_steps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub high_dim: bool,
    pub variants: Variants,
}

impl ModelConfig {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            latent_dim: 10,
            rnn_dim: 16,
            prior_rnn_dim: 16,
            mlp_hidden: [16, 16],
            window_len: 21,
            beta_final: 1.0,
            beta_decay_rate: 0.96,
            beta_decay_steps: 20.0,
            dropout: 0.1,
            l2: 0.01,
            learning_rate: 1e-3,
            lr_decay_rate: 0.96,
            lr_decay_steps: 500.0,
            batch_size: 256,
            epochs: 1000,
            high_dim: false,
            variants: Variants::default(),
        }
    }

    /// Wider networks, a lower learning rate and slower annealing for
    /// observation dimensions in the hundreds.
    pub fn high_dim(d: usize) -> Self {
        let mut c = Self::new(d);
        c.apply_high_dim();
        c
    }

    pub fn apply_high_dim(&mut self) {
        self.high_dim = true;
        self.rnn_dim = 80;
        self.prior_rnn_dim = 16;
        self.mlp_hidden = [60, 30];
        self.learning_rate = 1e-4;
        self.beta_decay_steps = 100.0;
    }

    /// Dropout rate actually applied to trainable recurrences.
    pub fn effective_dropout(&self) -> f64 {
        if self.variants.no_dropout {
            0.0
        } else {
            self.dropout
        }
    }

    pub fn effective_l2(&self) -> f64 {
        if self.variants.no_l2 {
            0.0
        } else {
            self.l2
        }
    }

    /// KL weight for a zero-based epoch.
    pub fn beta_at_epoch(&self, epoch: usize) -> f64 {
        if self.variants.no_anneal {
            return self.beta_final;
        }
        self.beta_final
            * (1.0 - self.beta_decay_rate.powf(epoch as f64 / self.beta_decay_steps))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("latent_dim", self.latent_dim),
            ("rnn_dim", self.rnn_dim),
            ("prior_rnn_dim", self.prior_rnn_dim),
            ("mlp_hidden", self.mlp_hidden[0].min(self.mlp_hidden[1])),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be at least 1")));
            }
        }
        if self.window_len < 2 {
            return Err(invalid("window_len must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let nonneg = [("beta_final", self.beta_final), ("l2", self.l2)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be finite and nonnegative")));
            }
        }
        let pos_real = [
            ("learning_rate", self.learning_rate),
            ("beta_decay_steps", self.beta_decay_steps),
            ("lr_decay_steps", self.lr_decay_steps),
        ];
        for (name, v) in pos_real {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("beta_decay_rate", self.beta_decay_rate),
            ("lr_decay_rate", self.lr_decay_rate),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.variants.deterministic_bottleneck && self.variants.no_anneal {
            return Err(invalid(
                "deterministic_bottleneck has no KL term, so no_anneal has no meaning",
            ));
        }
        Ok(())
    }

    /// Flat `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k}={v}").expect("write to string");
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let v = &self.variants;
        vec![
            ("d", self.d.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("rnn_dim", self.rnn_dim.to_string()),
            ("prior_rnn_dim", self.prior_rnn_dim.to_string()),
            ("mlp_hidden", format!("{},{}", self.mlp_hidden[0], self.mlp_hidden[1])),
            ("window_len", self.window_len.to_string()),
            ("beta_final", self.beta_final.to_string()),
            ("beta_decay_rate", self.beta_decay_rate.to_string()),
            ("beta_decay_steps", self.beta_decay_steps.to_string()),
            ("dropout", self.dropout.to_string()),
            ("l2", self.l2.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("lr_decay_rate", self.lr_decay_rate.to_string()),
            ("lr_decay_steps", self.lr_decay_steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("high_dim", self.high_dim.to_string()),
            ("trainable_prior", v.trainable_prior.to_string()),
            ("ar_decoder", v.ar_decoder.to_string()),
            ("backward_only_encoder", v.backward_only_encoder.to_string()),
            ("zero_mean_decoder", v.zero_mean_decoder.to_string()),
            ("diag_decoder_cov", v.diag_decoder_cov.to_string()),
            ("no_anneal", v.no_anneal.to_string()),
            ("no_dropout", v.no_dropout.to_string()),
            ("no_l2", v.no_l2.to_string()),
            ("deterministic_bottleneck", v.deterministic_bottleneck.to_string()),
        ]
    }

    /// Names accepted by [`ModelConfig::set`].
    pub fn keys() -> Vec<&'static str> {
        Self::new(1).entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one field from its textual value; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad value `{value}` for `{key}`")))
        }
        let v = &mut self.variants;
        match key {
            "d" => self.d = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "rnn_dim" => self.rnn_dim = num(key, value)?,
            "prior_rnn_dim" => self.prior_rnn_dim = num(key, value)?,
            "mlp_hidden" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 2 {
                    return Err(invalid(format!(
                        "`mlp_hidden` takes two comma-separated sizes, got `{value}`"
                    )));
                }
                self.mlp_hidden = [num(key, parts[0])?, num(key, parts[1])?];
            }
            "window_len" => self.window_len = num(key, value)?,
            "beta_final" => self.beta_final = num(key, value)?,
            "beta_decay_rate" => self.beta_decay_rate = num(key, value)?,
            "beta_decay_steps" => self.beta_decay_steps = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "lr_decay_rate" => self.lr_decay_rate = num(key, value)?,
            "lr_decay_steps" => self.lr_decay_steps = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "high_dim" => self.high_dim = num(key, value)?,
            "trainable_prior" => v.trainable_prior = num(key, value)?,
            "ar_decoder" => v.ar_decoder = num(key, value)?,
            "backward_only_encoder" => v.backward_only_encoder = num(key, value)?,
            "zero_mean_decoder" => v.zero_mean_decoder = num(key, value)?,
            "diag_decoder_cov" => v.diag_decoder_cov = num(key, value)?,
            "no_anneal" => v.no_anneal = num(key, value)?,
            "no_dropout" => v.no_dropout = num(key, value)?,
            "no_l2" => v.no_l2 = num(key, value)?,
            "deterministic_bottleneck" => v.deterministic_bottleneck = num(key, value)?,
            _ => return Err(invalid(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines (blank lines and `#` comments skipped).
    /// Every key must be known; missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = parse_kv(text)?;
        let d = match pairs.get("d") {
            Some(v) => v.parse().map_err(|_| invalid(format!("bad value `{v}` for `d`")))?,
            None => return Err(invalid("configuration lacks `d`")),
        };
        let mut c = Self::new(d);
        for (k, v) in &pairs {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Splits flat `key=value` text into pairs, rejecting malformed lines and
/// repeated keys.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: i + 1,
            msg: format!("expected `key=value`, found `{line}`"),
        })?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("key `{k}` appears twice"),
            });
        }
    }
    Ok(out)
}
