mod manifest;
mod svg;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tempvae::benchmarks::{read_params_csv, GarchParams, GarchStack, HS_WINDOW};
use tempvae::data::{
    format_number, gen_noise, load_prices_csv, load_returns_csv, prepare_windows,
    write_returns_csv, OscPcaConfig, ReturnSeries, WindowBatch, TRAIN_FRACTION,
};
use tempvae::evaluation::{
    activity_statistic, avg_active_count, backtest, score_forecasts, Forecaster, GarchSampler,
    HistoricalSimulation, MonteCarloVar, ReturnSampler, TempVaeSampler, VAR_SAMPLES,
};
use tempvae::model::{parse_kv, ModelConfig, TempVae, Trainer};

use manifest::Manifest;

/// Bad flags, flag combinations or configuration; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "tempvae", version, about = "Temporal VAE for return series and VaR backtesting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic return series.
    Gen(GenArgs),
    /// Train a model on a return series.
    Train(TrainArgs),
    /// Activity grid of a trained model's latent units.
    Activity(ActivityArgs),
    /// Backtest next-day VaR estimates over the test period.
    Backtest(BacktestArgs),
    /// Sample-based NLL scores of one-step forecasts.
    Score(ScoreArgs),
    /// Fit per-asset GARCH(1,1) models.
    GarchFit(GarchFitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Noise,
    OscPca,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: DataKind,
    /// Number of returns.
    #[arg(long = "T", default_value_t = 5050)]
    t: usize,
    #[arg(long, default_value_t = 22)]
    d: usize,
    /// Number of oscillators (osc-pca only).
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Input series shared by the commands that read data.
#[derive(Args)]
struct DataArgs {
    /// CSV with a date column followed by one column per asset.
    #[arg(long)]
    data: PathBuf,
    /// The file holds prices; log-returns are taken first.
    #[arg(long)]
    prices: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Flat `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue the run stored in `--out`.
    #[arg(long)]
    resume: bool,
    /// Save a checkpoint every this many epochs.
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
    #[arg(long)]
    no_anneal: bool,
    #[arg(long)]
    trainable_prior: bool,
    #[arg(long)]
    ar_decoder: bool,
    #[arg(long)]
    diag_cov: bool,
    #[arg(long)]
    zero_mean: bool,
    #[arg(long)]
    backward_encoder: bool,
    #[arg(long)]
    no_dropout: bool,
    #[arg(long)]
    no_l2: bool,
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    high_dim: bool,
}

impl TrainArgs {
    fn variant_flags(&self) -> Vec<(&'static str, bool)> {
        vec![
            ("no_anneal", self.no_anneal),
            ("trainable_prior", self.trainable_prior),
            ("ar_decoder", self.ar_decoder),
            ("diag_decoder_cov", self.diag_cov),
            ("zero_mean_decoder", self.zero_mean),
            ("backward_only_encoder", self.backward_encoder),
            ("no_dropout", self.no_dropout),
            ("no_l2", self.no_l2),
            ("deterministic_bottleneck", self.deterministic),
        ]
    }

    fn changes_model(&self) -> bool {
        self.config.is_some()
            || !self.overrides.is_empty()
            || self.high_dim
            || self.variant_flags().iter().any(|(_, on)| *on)
    }
}

#[derive(Args)]
struct ActivityArgs {
    /// Directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Evaluate a random subset of this many windows.
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Tempvae,
    Garch,
    Hs,
}

impl Estimator {
    fn name(self) -> &'static str {
        match self {
            Estimator::Tempvae => "tempvae",
            Estimator::Garch => "garch",
            Estimator::Hs => "hs",
        }
    }
}

#[derive(Args)]
struct BacktestArgs {
    #[arg(value_enum)]
    estimator: Estimator,
    /// Model directory (tempvae only).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Parameters from `garch-fit`; fitted on the training rows if absent.
    #[arg(long)]
    garch_params: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Monte-Carlo draws per day for model-based estimators.
    #[arg(long, default_value_t = VAR_SAMPLES)]
    samples: usize,
    /// Trailing window of the historical simulation.
    #[arg(long, default_value_t = HS_WINDOW)]
    hs_window: usize,
    /// Window length used to locate the train/test split when no model
    /// fixes it.
    #[arg(long, default_value_t = 21)]
    window_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write an SVG plot of the VaR paths.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(value_enum)]
    estimator: Estimator,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    garch_params: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = VAR_SAMPLES)]
    samples: usize,
    /// Score every this many test days.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 21)]
    window_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GarchFitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Fit on every row instead of the training rows only.
    #[arg(long)]
    all_rows: bool,
    #[arg(long, default_value_t = 21)]
    window_len: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Activity(a) => cmd_activity(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::Score(a) => cmd_score(a),
        Command::GarchFit(a) => cmd_garch_fit(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_series(a: &DataArgs) -> Result<ReturnSeries> {
    let series = if a.prices {
        load_prices_csv(&a.data)?.log_returns()?
    } else {
        load_returns_csv(&a.data)?
    };
    log::info!(
        "loaded {} rows × {} assets from {}",
        series.returns.nrows(),
        series.returns.ncols(),
        a.data.display()
    );
    Ok(series)
}

fn record_data(m: &mut Manifest, a: &DataArgs) -> Result<()> {
    m.push("prices", a.prices);
    m.input_file("data", &a.data)
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    if a.t < 2 || a.d == 0 {
        return Err(usage("--T must be at least 2 and --d positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut m = Manifest::new("gen", Some(a.seed));
    m.push("T", a.t);
    m.push("d", a.d);
    let returns = match a.kind {
        DataKind::Noise => {
            m.push("kind", "noise");
            gen_noise(a.t, a.d, &mut rng)?
        }
        DataKind::OscPca => {
            if a.k == 0 || a.k > a.d {
                return Err(usage(format!("--k must lie in 1..={}", a.d)));
            }
            m.push("kind", "osc-pca");
            m.push("k", a.k);
            let osc = OscPcaConfig::new(a.t, a.k, a.d).generate(&mut rng)?;
            m.push("retries", osc.retries);
            for (j, o) in osc.oscillators.iter().enumerate() {
                m.push(format!("oscillator{j}.intercept"), o.intercept);
                m.push(format!("oscillator{j}.amplitude"), o.amplitude);
                m.push(format!("oscillator{j}.frequency"), o.frequency);
            }
            osc.returns
        }
    };
    create_dir(&a.out)?;
    write_returns_csv(a.out.join("returns.csv"), &ReturnSeries::with_default_labels(returns))?;
    m.write(&a.out)?;
    log::info!("wrote {}", a.out.join("returns.csv").display());
    Ok(())
}

/// Defaults, then the high-dimensional preset, then the config file, then
/// individual flags.
fn resolve_config(a: &TrainArgs, d: usize) -> Result<ModelConfig> {
    let file_pairs = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            parse_kv(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => Default::default(),
    };
    let mut flag_pairs = Vec::new();
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        flag_pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(e) = a.epochs {
        flag_pairs.push(("epochs".into(), e.to_string()));
    }
    for (key, on) in a.variant_flags() {
        if on {
            flag_pairs.push((key.into(), "true".into()));
        }
    }

    let mut c = ModelConfig::new(d);
    let wants_high_dim = a.high_dim
        || file_pairs.get("high_dim").is_some_and(|v| v.trim() == "true")
        || flag_pairs.iter().any(|(k, v)| k == "high_dim" && v == "true");
    if wants_high_dim {
        c.apply_high_dim();
    }
    let pairs = file_pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()));
    let pairs = pairs.chain(flag_pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())));
    for (k, v) in pairs {
        if k == "d" {
            if v.trim() != d.to_string() {
                return Err(usage(format!("configuration sets d={v} but the data has {d} columns")));
            }
            continue;
        }
        c.set(k, v).map_err(|e| usage(e.to_string()))?;
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn windows_for(returns: &Array2<f64>, window_len: usize) -> Result<WindowBatch> {
    Ok(prepare_windows(returns, window_len, TRAIN_FRACTION)?)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    if a.checkpoint_every == 0 {
        return Err(usage("--checkpoint-every must be positive"));
    }
    let series = load_series(&a.data)?;
    let mut trainer = if a.resume {
        if a.changes_model() {
            return Err(usage("--resume takes its configuration from the checkpoint; only --epochs may change"));
        }
        let t = Trainer::load(&a.out)
            .with_context(|| format!("loading checkpoint from {}", a.out.display()))?;
        log::info!("resuming at epoch {}", t.state.epoch);
        t
    } else {
        let config = resolve_config(&a, series.returns.ncols())?;
        // Weight initialization uses its own stream so it never shares draws
        // with the per-epoch streams.
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(u64::MAX);
        Trainer::new(TempVae::new(config, &mut rng)?, a.seed)
    };
    let total = a.epochs.unwrap_or(trainer.model.config.epochs);
    if a.resume && a.seed != trainer.seed {
        log::warn!("ignoring --seed {}; the checkpoint was trained with seed {}", a.seed, trainer.seed);
    }
    let c = trainer.model.config.clone();
    if series.returns.ncols() != c.d {
        return Err(usage(format!(
            "data has {} columns, model expects {}",
            series.returns.ncols(),
            c.d
        )));
    }
    let data = windows_for(&series.returns, c.window_len)?;
    create_dir(&a.out)?;

    let mut m = Manifest::new("train", Some(trainer.seed));
    record_data(&mut m, &a.data)?;
    m.push("resume", a.resume);
    m.push("start_epoch", trainer.state.epoch);
    m.push("epochs", total);
    m.push("train_windows", data.n_train);
    m.push("test_windows", data.len() - data.n_train);
    m.push_kv("config", &c.to_kv());

    let out = a.out.clone();
    let every = a.checkpoint_every;
    trainer.train_until(&data, total, |t, metrics| {
        if (metrics.epoch + 1) % every == 0 {
            log::info!(
                "epoch {}: loss {} recon {} kl {} beta {}",
                metrics.epoch,
                format_number(metrics.loss),
                format_number(metrics.recon),
                format_number(metrics.kl),
                format_number(metrics.beta)
            );
            t.save(&out)?;
        }
        Ok(())
    })?;
    trainer.save(&a.out)?;
    m.push("final_epoch", trainer.state.epoch);
    m.write(&a.out)?;
    log::info!("saved checkpoint to {}", a.out.display());
    Ok(())
}

fn load_model(dir: &Path) -> Result<TempVae> {
    TempVae::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn check_dims(model: &TempVae, returns: &Array2<f64>) -> Result<()> {
    if returns.ncols() != model.config.d {
        return Err(usage(format!(
            "data has {} columns, model expects {}",
            returns.ncols(),
            model.config.d
        )));
    }
    Ok(())
}

fn cmd_activity(a: ActivityArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let series = load_series(&a.data)?;
    check_dims(&model, &series.returns)?;
    let data = windows_for(&series.returns, model.config.window_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let activity = activity_statistic(&model, data.windows.view(), a.n_eval, &mut rng)?;

    create_dir(&a.out)?;
    activity.write_csv(&a.out.join("activity.csv"))?;
    let avg = avg_active_count(&activity);
    let inactive = activity.values.iter().filter(|&&v| v < tempvae::evaluation::INACTIVE_THRESHOLD).count();
    let max = activity.values.iter().copied().fold(0.0, f64::max);
    let per_step = activity.active_per_step();
    let mut w = csv::Writer::from_path(a.out.join("summary.csv"))?;
    w.write_record(["avg_active_count", "inactive_cells", "cells", "max_activity", "active_per_step"])?;
    w.write_record([
        format_number(avg),
        inactive.to_string(),
        activity.values.len().to_string(),
        format_number(max),
        per_step.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
    ])?;
    w.flush()?;

    let mut m = Manifest::new("activity", Some(a.seed));
    m.input_dir("checkpoint", &a.checkpoint)?;
    record_data(&mut m, &a.data)?;
    m.push("n_eval", a.n_eval.map_or("all".to_string(), |n| n.to_string()));
    m.write(&a.out)?;
    log::info!("average active count {}%, {} of {} cells inactive", format_number(avg), inactive, activity.values.len());
    Ok(())
}

/// Model state a sampler borrows from.
struct Loaded {
    model: Option<TempVae>,
    garch: Option<Vec<GarchParams>>,
    data: WindowBatch,
}

fn load_estimator(
    estimator: Estimator,
    checkpoint: Option<&Path>,
    garch_params: Option<&Path>,
    returns: &Array2<f64>,
    window_len: usize,
    m: &mut Manifest,
) -> Result<Loaded> {
    if checkpoint.is_some() && !matches!(estimator, Estimator::Tempvae) {
        return Err(usage("--checkpoint only applies to the tempvae estimator"));
    }
    if garch_params.is_some() && !matches!(estimator, Estimator::Garch) {
        return Err(usage("--garch-params only applies to the garch estimator"));
    }
    m.push("estimator", estimator.name());
    match estimator {
        Estimator::Tempvae => {
            let dir = checkpoint.ok_or_else(|| usage("the tempvae estimator needs --checkpoint"))?;
            let model = load_model(dir)?;
            check_dims(&model, returns)?;
            m.input_dir("checkpoint", dir)?;
            let data = windows_for(returns, model.config.window_len)?;
            Ok(Loaded { model: Some(model), garch: None, data })
        }
        Estimator::Garch => {
            let data = windows_for(returns, window_len)?;
            let params = match garch_params {
                Some(path) => {
                    m.input_file("garch_params", path)?;
                    let (_, params) = read_params_csv(path)?;
                    if params.len() != returns.ncols() {
                        return Err(usage(format!(
                            "{} GARCH parameter rows for {} assets",
                            params.len(),
                            returns.ncols()
                        )));
                    }
                    params
                }
                None => {
                    let rows = data.split_row();
                    log::info!("fitting GARCH(1,1) per asset on the first {rows} rows");
                    let names: Vec<String> = (0..returns.ncols()).map(|j| format!("A{}", j + 1)).collect();
                    GarchStack::fit(returns.slice(ndarray::s![..rows, ..]), &names)?.params()
                }
            };
            m.push("window_len", window_len);
            Ok(Loaded { model: None, garch: Some(params), data })
        }
        Estimator::Hs => {
            m.push("window_len", window_len);
            Ok(Loaded { model: None, garch: None, data: windows_for(returns, window_len)? })
        }
    }
}

impl Loaded {
    fn sampler(&self) -> Option<Box<dyn ReturnSampler + '_>> {
        if let Some(model) = &self.model {
            return Some(Box::new(TempVaeSampler {
                model,
                mu: self.data.mu.clone(),
                sigma: self.data.sigma.clone(),
            }));
        }
        self.garch.as_ref().map(|params| {
            Box::new(GarchSampler { params: params.clone(), min_history: 1 }) as Box<dyn ReturnSampler>
        })
    }
}

fn cmd_backtest(a: BacktestArgs) -> Result<()> {
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let series = load_series(&a.data)?;
    let mut m = Manifest::new("backtest", Some(a.seed));
    record_data(&mut m, &a.data)?;
    let loaded = load_estimator(
        a.estimator,
        a.checkpoint.as_deref(),
        a.garch_params.as_deref(),
        &series.returns,
        a.window_len,
        &mut m,
    )?;
    let mut forecaster: Box<dyn Forecaster + '_> = match loaded.sampler() {
        Some(sampler) => Box::new(MonteCarloVar { sampler, n_samples: a.samples }),
        None => {
            m.push("hs_window", a.hs_window);
            Box::new(HistoricalSimulation { window: a.hs_window })
        }
    };
    let test_start = loaded.data.split_row();
    m.push("samples", a.samples);
    m.push("test_start", test_start);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let report = backtest(forecaster.as_mut(), series.returns.view(), test_start, &mut rng)?;

    create_dir(&a.out)?;
    report.write_csv(&a.out.join("backtest.csv"))?;
    report.write_summary_csv(&a.out.join("summary.csv"))?;
    if a.svg {
        svg::write_backtest_svg(&report, &a.out.join("backtest.svg"))?;
    }
    m.write(&a.out)?;
    log::info!(
        "{}: {} days, RLF95 {} RLF99 {} Br95 {} Br99 {}",
        report.forecaster,
        report.days.len(),
        format_number(report.rlf95()),
        format_number(report.rlf99()),
        format_number(report.breaches95()),
        format_number(report.breaches99())
    );
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    if a.samples == 0 || a.stride == 0 {
        return Err(usage("--samples and --stride must be positive"));
    }
    let series = load_series(&a.data)?;
    let mut m = Manifest::new("score", Some(a.seed));
    record_data(&mut m, &a.data)?;
    let loaded = load_estimator(
        a.estimator,
        a.checkpoint.as_deref(),
        a.garch_params.as_deref(),
        &series.returns,
        a.window_len,
        &mut m,
    )?;
    let mut sampler = loaded
        .sampler()
        .ok_or_else(|| usage("historical simulation has no predictive distribution to score"))?;
    let test_start = loaded.data.split_row();
    m.push("samples", a.samples);
    m.push("stride", a.stride);
    m.push("test_start", test_start);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let s = score_forecasts(&mut sampler, series.returns.view(), test_start, a.samples, a.stride, &mut rng)?;

    create_dir(&a.out)?;
    let mut w = csv::Writer::from_path(a.out.join("scores.csv"))?;
    w.write_record(["estimator", "days", "nll", "diagonal_nll", "portfolio_nll"])?;
    w.write_record([
        a.estimator.name().to_string(),
        s.days.to_string(),
        s.nll.map_or("NA".to_string(), format_number),
        format_number(s.diagonal_nll),
        format_number(s.portfolio_nll),
    ])?;
    w.flush()?;
    m.write(&a.out)?;
    if s.nll.is_none() {
        log::warn!("full NLL undefined: some day's sample covariance was singular");
    }
    log::info!("scored {} days", s.days);
    Ok(())
}

fn cmd_garch_fit(a: GarchFitArgs) -> Result<()> {
    let series = load_series(&a.data)?;
    let rows = if a.all_rows {
        series.returns.nrows()
    } else {
        windows_for(&series.returns, a.window_len)?.split_row()
    };
    let stack = GarchStack::fit(series.returns.slice(ndarray::s![..rows, ..]), &series.assets)?;
    create_dir(&a.out)?;
    stack.write_csv(&a.out.join("garch_params.csv"))?;
    let mut m = Manifest::new("garch-fit", None);
    record_data(&mut m, &a.data)?;
    m.push("rows", rows);
    m.write(&a.out)?;
    log::info!("fitted {} assets on {rows} rows", stack.assets.len());
    Ok(())
}
