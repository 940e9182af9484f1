use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use log::info;

use super::client::{client_run_prepared, ClientConfig};
use super::server::{Server, ServerConfig, TrainingLog};
use crate::dataset::{load_pairs, partition, simulation_corpus, PartitionMode, SamplePair};
use crate::imaging::ResizeTarget;
use crate::metrics::RoundMetrics;
use crate::model::{evaluate, prepare_dataset, ReferenceModel, SegmentationModel, TrainConfig};
use crate::{Error, Result};

/// Where the training data comes from: a corpus on disk, or the procedural
/// two-source generator.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub images: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    /// Generated training samples (half low-noise, half high-noise).
    pub samples: usize,
    /// Generated held-out samples.
    pub holdout: usize,
    /// Side of generated images, and longest side of loaded ones.
    pub size: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            images: None,
            masks: None,
            samples: 200,
            holdout: 50,
            size: 64,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    /// Returns `(training, held-out)`. A corpus on disk has no held-out set.
    pub fn load(&self) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
        match (&self.images, &self.masks) {
            (Some(images), Some(masks)) => Ok((load_pairs(images, masks, ResizeTarget::MaxDim(self.size))?.pairs, Vec::new())),
            (None, None) => simulation_corpus(self.samples, self.holdout, (self.size, self.size), self.seed),
            _ => Err(Error::InvalidArgument("images and masks must be given together".into())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub clients: usize,
    pub rounds: u32,
    pub partition: PartitionMode,
    pub corpus: CorpusSpec,
    pub train: TrainConfig,
    pub eval_samples: u32,
    pub save_dir: PathBuf,
    pub round_timeout: Duration,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            clients: 2,
            rounds: 5,
            partition: PartitionMode::BySource,
            corpus: CorpusSpec::default(),
            train: desk_train_config(0),
            eval_samples: 10,
            save_dir: PathBuf::from("simulation"),
            round_timeout: Duration::from_secs(600),
        }
    }
}

/// Local training settings sized for a laptop run of the reference model.
pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        steps_per_epoch: 5,
        batch_size: 16,
        lr: 0.05,
        weight_decay: 4e-5,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct SimulationReport {
    pub log: TrainingLog,
    /// Metrics of the final model on the held-out set, if there is one.
    pub holdout: Option<RoundMetrics>,
    pub final_checkpoint: PathBuf,
    pub client_sizes: Vec<usize>,
}

/// Training and held-out sets for a simulation.
pub fn simulation_dataset(cfg: &SimulationConfig) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    cfg.corpus.load()
}

/// Runs a server and `cfg.clients` clients in this process over loopback
/// TCP. Clients join one after another, so ids follow client order.
pub fn simulate(cfg: &SimulationConfig) -> Result<SimulationReport> {
    if cfg.clients == 0 {
        return Err(Error::InvalidArgument("at least one client is required".into()));
    }
    let (train, holdout) = simulation_dataset(cfg)?;
    let sources: Vec<String> = train.iter().map(|s| s.source_id.clone()).collect();
    let parts = partition(train.len(), &sources, cfg.partition, cfg.clients, cfg.corpus.seed)?;
    let mut shards = Vec::with_capacity(cfg.clients);
    for (client, idx) in &parts.assignments {
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("client {client} received no samples")));
        }
        let subset: Vec<SamplePair> = idx.iter().map(|&i| train[i].clone()).collect();
        shards.push(prepare_dataset(&subset)?);
    }
    let client_sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
    info!("simulating {} clients with {:?} samples", cfg.clients, client_sizes);

    let model = ReferenceModel;
    let server_cfg = ServerConfig {
        rounds: cfg.rounds,
        min_fit: cfg.clients,
        min_eval: cfg.clients,
        min_available: cfg.clients,
        save_dir: cfg.save_dir.clone(),
        manifest: model.manifest(),
        listen: "127.0.0.1:0".into(),
        train: cfg.train,
        eval_samples: cfg.eval_samples,
        round_timeout: cfg.round_timeout,
        join_timeout: Some(Duration::from_secs(60)),
        ..ServerConfig::default()
    };
    let server = Server::bind(server_cfg)?;
    let handle = server.handle();
    let addr = handle.local_addr().to_string();

    let log = thread::scope(|s| -> Result<TrainingLog> {
        let server_thread = s.spawn(move || server.run());
        let mut clients = Vec::new();
        for (k, shard) in shards.iter().enumerate() {
            let ccfg = ClientConfig::new(addr.clone(), format!("client-{k}"));
            clients.push(s.spawn(move || client_run_prepared(&model, &ccfg, shard)));
            while handle.joined() <= k as u32 {
                if server_thread.is_finished() {
                    break;
                }
                thread::sleep(Duration::from_millis(2));
            }
        }
        let log = server_thread.join().expect("server thread panicked");
        for c in clients {
            let r = c.join().expect("client thread panicked");
            if log.is_ok() {
                r?;
            }
        }
        log
    })?;

    let final_checkpoint = log.rounds.last().expect("rounds >= 1").checkpoint.clone();
    let holdout_metrics = if holdout.is_empty() {
        None
    } else {
        Some(evaluate(&model, &log.final_params, &holdout, holdout.len(), &cfg.train.loss, cfg.corpus.seed)?)
    };
    Ok(SimulationReport {
        log,
        holdout: holdout_metrics,
        final_checkpoint,
        client_sizes,
    })
}
