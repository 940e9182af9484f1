//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

use crate::acquisition::{run_monitor, AcquisitionConfig, MonitorMode};
use crate::dataset::{load_pairs, save_corpus, synth_generate_with, PartitionMode, SynthConfig};
use crate::federation::{client_run, desk_train_config, server_run, simulate, ClientConfig, CorpusSpec, ServerConfig, SimulationConfig};
use crate::imaging::ResizeTarget;
use crate::inference::{infer_file, infer_inputs, InferenceConfig};
use crate::maskgen::{process_directory, MaskGenConfig};
use crate::model::{evaluate, load_checkpoint, save_checkpoint, train_local, ReferenceModel, SegmentationModel, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "foamfed", version, about = "Federated foam segmentation toolkit")]
struct Cli {
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    log_level: LogLevel,
    /// Seed for every random choice (data generation, shuffling, prompts).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classical foam masks for a directory of frames.
    Maskgen(MaskgenArgs),
    /// Write a procedural image/mask corpus.
    Synth(SynthArgs),
    /// Train the reference model locally.
    Train(TrainCmd),
    /// Run the federated server.
    Server(ServerArgs),
    /// Join a server as a training client.
    Client(ClientArgs),
    /// Segment images with a trained model.
    Infer(InferArgs),
    /// Watch an image store and record foam coverage.
    Monitor(MonitorArgs),
    /// Server and clients in one process over loopback TCP.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct MaskgenArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    night_threshold: Option<f64>,
    #[arg(long)]
    min_area: Option<usize>,
    /// Flat TOML file with MaskGenConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Noise {
    Low,
    High,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    size: (usize, usize),
    #[arg(long, value_enum, default_value_t = Noise::Low)]
    noise: Noise,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Image directory of a corpus on disk (requires --masks).
    #[arg(long, requires = "masks")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    masks: Option<PathBuf>,
    /// Generated training samples when no corpus is given.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Generated held-out samples.
    #[arg(long, default_value_t = 50)]
    holdout: usize,
    /// Side of generated images; longest side of loaded ones.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

impl CorpusArgs {
    fn spec(&self, seed: u64) -> CorpusSpec {
        CorpusSpec {
            images: self.images.clone(),
            masks: self.masks.clone(),
            samples: self.samples,
            holdout: self.holdout,
            size: self.size,
            seed,
        }
    }
}

/// Training flags; unset values fall back to the command's defaults.
#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    steps: Option<u32>,
    #[arg(long)]
    batch: Option<u32>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

impl TrainArgs {
    fn any(&self) -> bool {
        self.epochs.is_some() || self.steps.is_some() || self.batch.is_some() || self.lr.is_some() || self.weight_decay.is_some()
    }

    fn apply(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            steps_per_epoch: self.steps.unwrap_or(base.steps_per_epoch),
            batch_size: self.batch.unwrap_or(base.batch_size),
            lr: self.lr.unwrap_or(base.lr),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            ..base
        }
    }
}

#[derive(Debug, Args)]
struct TrainCmd {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Defaults: 3 epochs of 5 steps, batch 16, lr 0.05, weight decay 4e-5.
    #[command(flatten)]
    train: TrainArgs,
    /// Start from this checkpoint instead of zeros.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value = "model.fp")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ServerArgs {
    #[arg(long, default_value_t = 5)]
    rounds: u32,
    #[arg(long, default_value = "0.0.0.0:8765")]
    listen: String,
    #[arg(long)]
    save_dir: PathBuf,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    min_clients: usize,
    #[arg(long, default_value_t = 1.0)]
    fraction_fit: f64,
    #[arg(long, default_value_t = 1.0)]
    fraction_eval: f64,
    #[arg(long, default_value_t = 10)]
    eval_samples: u32,
    /// Seconds to wait for a client's reply before dropping it.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    /// Sent to clients. Defaults: 30 epochs of 9 steps, batch 32, lr 1e-5,
    /// weight decay 4e-5.
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
struct ClientArgs {
    #[arg(long)]
    server: String,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    masks: PathBuf,
    /// Longest side the local images are resized to.
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long)]
    name: Option<String>,
    /// Where to write the final global model.
    #[arg(long)]
    final_model: Option<PathBuf>,
    /// Any of these replaces the server's training settings.
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long, default_value_t = 0.3)]
    overlap: f64,
    #[arg(long, default_value_t = 0.002)]
    min_area_frac: f64,
    #[arg(long, default_value_t = 1024)]
    max_dim: usize,
}

#[derive(Debug, Args)]
struct MonitorArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Seconds between polls.
    #[arg(long, default_value_t = 600)]
    interval: u64,
    /// Run one verification sweep and exit.
    #[arg(long)]
    verify: bool,
    /// Stop after this many polls.
    #[arg(long)]
    ticks: Option<u64>,
    /// Poll this day (YYYYMMDD) instead of today.
    #[arg(long, value_parser = parse_day)]
    day: Option<NaiveDate>,
    /// Mask output directory (default: `masks/` next to the registry).
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long, default_value_t = 1024)]
    max_dim: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    clients: usize,
    #[arg(long, default_value_t = 5)]
    rounds: u32,
    #[arg(long, value_enum, default_value_t = PartitionMode::BySource)]
    partition: PartitionMode,
    #[arg(long, default_value = "simulation")]
    save_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    eval_samples: u32,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Defaults: 3 epochs of 5 steps, batch 16, lr 0.05, weight decay 4e-5.
    #[command(flatten)]
    train: TrainArgs,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    if w == 0 || h == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((w, h))
}

fn parse_day(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y%m%d").map_err(|e| format!("expected YYYYMMDD: {e}"))
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 1 on a runtime failure and 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level.into())
        .format_timestamp_millis()
        .try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            if matches!(e, Error::InvalidArgument(_)) {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Maskgen(a) => {
            let mut cfg = match &a.config {
                Some(p) => MaskGenConfig::load(p)?,
                None => MaskGenConfig::default(),
            };
            if let Some(t) = a.night_threshold {
                cfg.night_threshold = t;
            }
            if let Some(m) = a.min_area {
                cfg.min_area = m;
            }
            let r = process_directory(&a.input, &a.output, &cfg)?;
            writeln!(out, "processed={} skipped={} day={} night={}", r.processed, r.skipped, r.day, r.night)?;
        }
        Command::Synth(a) => {
            let cfg = match a.noise {
                Noise::Low => SynthConfig::low_noise(),
                Noise::High => SynthConfig::high_noise(),
            };
            let pairs = synth_generate_with(a.count, a.size, seed, &cfg)?;
            save_corpus(&pairs, &a.output)?;
            writeln!(out, "wrote {} pairs to {}", pairs.len(), a.output.display())?;
        }
        Command::Train(a) => {
            let cfg = a.train.apply(desk_train_config(seed));
            let (train, holdout) = a.corpus.spec(seed).load()?;
            let model = ReferenceModel;
            let mut params = model.init_params();
            if let Some(init) = &a.init {
                params.load_from(&load_checkpoint(init)?)?;
            }
            info!("training on {} samples", train.len());
            let (params, m) = train_local(&model, &params, &train, &cfg)?;
            save_checkpoint(&params, &a.output)?;
            writeln!(out, "train loss={} iou={} pixel_accuracy={} dice={}", m.loss, m.iou, m.pixel_accuracy, m.dice)?;
            if !holdout.is_empty() {
                let h = evaluate(&model, &params, &holdout, holdout.len(), &cfg.loss, seed)?;
                writeln!(out, "holdout loss={} iou={} pixel_accuracy={} dice={}", h.loss, h.iou, h.pixel_accuracy, h.dice)?;
            }
            writeln!(out, "checkpoint {}", a.output.display())?;
        }
        Command::Server(a) => {
            let cfg = ServerConfig {
                rounds: a.rounds,
                fraction_fit: a.fraction_fit,
                fraction_eval: a.fraction_eval,
                min_fit: a.min_clients,
                min_eval: a.min_clients,
                min_available: a.min_clients,
                save_dir: a.save_dir,
                initial_checkpoint: a.init,
                listen: a.listen,
                train: a.train.apply(TrainConfig { seed, ..TrainConfig::default() }),
                eval_samples: a.eval_samples,
                round_timeout: Duration::from_secs(a.timeout),
                ..ServerConfig::default()
            };
            let log = server_run(cfg)?;
            for r in &log.rounds {
                writeln!(out, "round {} loss={} dice={} checkpoint={}", r.round, r.fit.loss, r.fit.dice, r.checkpoint.display())?;
            }
        }
        Command::Client(a) => {
            let pairs = load_pairs(&a.images, &a.masks, ResizeTarget::MaxDim(a.size))?.pairs;
            let mut cfg = ClientConfig::new(a.server, a.name.unwrap_or_else(|| format!("client-{}", std::process::id())));
            cfg.final_model = a.final_model;
            if a.train.any() {
                cfg.train_override = Some(a.train.apply(TrainConfig { seed, ..TrainConfig::default() }));
            }
            let outcome = client_run(&ReferenceModel, &cfg, &pairs)?;
            writeln!(out, "client {} finished after {} fit rounds", outcome.client_id, outcome.fit_rounds)?;
        }
        Command::Infer(a) => {
            let cfg = InferenceConfig {
                n_points: a.points,
                overlap_threshold: a.overlap,
                min_area_frac: a.min_area_frac,
                max_dim: a.max_dim,
                ..InferenceConfig::default()
            };
            cfg.validate()?;
            let mut params = ReferenceModel.init_params();
            params.load_from(&load_checkpoint(&a.model)?)?;
            for path in infer_inputs(&a.input)? {
                let rec = infer_file(&path, &params, &cfg, &a.output)?;
                writeln!(out, "{},{}", rec.stem, rec.foam_pct)?;
            }
        }
        Command::Monitor(a) => {
            let mut cfg = AcquisitionConfig::new(a.store, a.registry, a.model);
            cfg.poll_interval = Duration::from_secs(a.interval);
            if let Some(m) = a.masks {
                cfg.mask_dir = m;
            }
            cfg.inference.n_points = a.points;
            cfg.inference.max_dim = a.max_dim;
            let mode = if a.verify {
                MonitorMode::Verify
            } else {
                MonitorMode::Poll { ticks: a.ticks, day: a.day }
            };
            let s = run_monitor(&cfg, mode)?;
            writeln!(out, "processed={} ok={} invalid={} failed={}", s.processed, s.ok, s.invalid, s.failed)?;
        }
        Command::Simulate(a) => {
            let cfg = SimulationConfig {
                clients: a.clients,
                rounds: a.rounds,
                partition: a.partition,
                corpus: a.corpus.spec(seed),
                train: a.train.apply(desk_train_config(seed)),
                eval_samples: a.eval_samples,
                save_dir: a.save_dir,
                ..SimulationConfig::default()
            };
            let report = simulate(&cfg)?;
            writeln!(out, "round,loss,iou,pixel_accuracy,dice")?;
            for r in &report.log.rounds {
                writeln!(out, "{},{},{},{},{}", r.round, r.fit.loss, r.fit.iou, r.fit.pixel_accuracy, r.fit.dice)?;
            }
            if let Some(h) = report.holdout {
                writeln!(out, "holdout loss={} iou={} pixel_accuracy={} dice={}", h.loss, h.iou, h.pixel_accuracy, h.dice)?;
            }
            writeln!(out, "checkpoint {}", report.final_checkpoint.display())?;
        }
    }
    Ok(())
}
