//! Continuous ingestion of captured frames: start-up self-check, polling
//! for the newest frame, verification sweeps, and a registry of results.

mod registry;
mod store;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use chrono::{NaiveDate, Utc};
use log::{error, info, warn};

pub use registry::{ImageRecord, Registry, Status, REGISTRY_HEADER};
pub use store::{parse_timestamp, ImageStore, LocalDirStore, StoreEntry, DEFAULT_TIMESTAMP_PATTERN};

use crate::imaging::{decode_image, save_mask_png, Image};
use crate::inference::{segment_foam, InferenceConfig};
use crate::model::{load_checkpoint, ModelParams, ReferenceModel, SegmentationModel};
use crate::{Error, Result};

/// Capacity of the queue between the polling and processing threads.
pub const QUEUE_CAPACITY: usize = 16;
pub const MIN_SIDE: usize = 64;

#[derive(Clone, Debug)]
pub struct AcquisitionConfig {
    pub poll_interval: Duration,
    pub store_root: PathBuf,
    pub registry_path: PathBuf,
    /// Where mask PNGs are written.
    pub mask_dir: PathBuf,
    pub model_path: PathBuf,
    pub inference: InferenceConfig,
    pub timestamp_pattern: String,
}

impl AcquisitionConfig {
    pub fn new(store_root: impl Into<PathBuf>, registry_path: impl Into<PathBuf>, model_path: impl Into<PathBuf>) -> Self {
        let registry_path = registry_path.into();
        let mask_dir = registry_path
            .parent()
            .map(|p| p.join("masks"))
            .unwrap_or_else(|| PathBuf::from("masks"));
        Self {
            poll_interval: Duration::from_secs(600),
            store_root: store_root.into(),
            registry_path,
            mask_dir,
            model_path: model_path.into(),
            inference: InferenceConfig::default(),
            timestamp_pattern: DEFAULT_TIMESTAMP_PATTERN.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.poll_interval.is_zero() {
            return Err(Error::Config("poll interval must be positive".into()));
        }
        self.inference.validate()
    }

    pub fn store(&self) -> LocalDirStore {
        LocalDirStore::with_pattern(&self.store_root, &self.timestamp_pattern)
    }
}

/// Why a frame was rejected.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum InvalidImage {
    #[error("decode: {0}")]
    Decode(String),
    #[error("too-small: {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("constant: every pixel is identical")]
    Constant,
}

/// Decodes a frame and rejects tiny or uniform ones (a blank transmission).
pub fn validate_image(bytes: &[u8]) -> std::result::Result<Image, InvalidImage> {
    let img = decode_image(bytes).map_err(|e| InvalidImage::Decode(e.to_string()))?;
    let (width, height) = (img.width(), img.height());
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(InvalidImage::TooSmall { width, height });
    }
    let c = img.channels();
    let first = &img.data()[..c];
    if img.data().chunks_exact(c).all(|px| px == first) {
        return Err(InvalidImage::Constant);
    }
    Ok(img)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckResult {
    pub component: &'static str,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Readiness {
    pub checks: Vec<CheckResult>,
}

impl Readiness {
    pub fn ready(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.ok).collect()
    }
}

/// Checks the store is listable, the registry can be opened (or created)
/// and the checkpoint loads with the expected tensors.
pub fn self_check(cfg: &AcquisitionConfig) -> Readiness {
    let mut checks = Vec::new();
    let store = match std::fs::read_dir(&cfg.store_root) {
        Ok(_) => cfg.store().list_all().map(|l| format!("{} images", l.len())),
        Err(e) => Err(Error::io(format!("store {}", cfg.store_root.display()), e)),
    };
    checks.push(check("store", store));
    checks.push(check(
        "registry",
        Registry::open(&cfg.registry_path).map(|r| format!("{} records", r.len())),
    ));
    let model = load_checkpoint(&cfg.model_path).and_then(|p| {
        if p.manifest() == ReferenceModel.manifest() {
            Ok(format!("{} parameters", p.scalar_count()))
        } else {
            Err(Error::Params("checkpoint tensors do not match the model".into()))
        }
    });
    checks.push(check("model", model));
    Readiness { checks }
}

fn check(component: &'static str, r: Result<String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult {
            component,
            ok: true,
            detail,
        },
        Err(e) => CheckResult {
            component,
            ok: false,
            detail: e.to_string(),
        },
    }
}

/// The newest frame of `day` that is not yet registered; ties on the
/// timestamp go to the larger name.
pub fn poll_latest(store: &dyn ImageStore, registry: &Registry, day: NaiveDate) -> Result<Option<String>> {
    poll_latest_excluding(store, registry, day, &HashSet::new())
}

fn poll_latest_excluding(store: &dyn ImageStore, registry: &Registry, day: NaiveDate, pending: &HashSet<String>) -> Result<Option<String>> {
    Ok(store
        .list(day)?
        .into_iter()
        .filter(|e| !registry.contains(&e.name) && !pending.contains(&e.name))
        .max()
        .map(|e| e.name))
}

/// Everything needed to turn a frame into a registry row.
#[derive(Clone, Debug)]
pub struct Processor {
    pub params: ModelParams,
    pub inference: InferenceConfig,
    pub mask_dir: PathBuf,
}

impl Processor {
    pub fn load(cfg: &AcquisitionConfig) -> Result<Self> {
        let mut params = ReferenceModel.init_params();
        params.load_from(&load_checkpoint(&cfg.model_path)?)?;
        Ok(Self {
            params,
            inference: cfg.inference.clone(),
            mask_dir: cfg.mask_dir.clone(),
        })
    }
}

/// Fetch, validate, segment, write the mask and record the outcome. A name
/// that already has a record is left alone and its record returned.
pub fn process_one(name: &str, store: &dyn ImageStore, registry: &mut Registry, proc: &Processor) -> Result<ImageRecord> {
    if let Some(existing) = registry.get(name) {
        return Ok(existing.clone());
    }
    let captured_at = store
        .timestamp(name)
        .ok_or_else(|| Error::InvalidArgument(format!("{name} has no timestamp")))?;
    let (status, foam_pct, mask_path, error) = match run_pipeline(name, store, proc) {
        Ok((pct, path)) => (Status::Ok, Some(pct), Some(path), None),
        Err(Outcome::Invalid(reason)) => (Status::Invalid, None, None, Some(reason.to_string())),
        Err(Outcome::Failed(e)) => (Status::Failed, None, None, Some(e.to_string())),
    };
    if let Some(err) = &error {
        warn!("{name}: {} ({err})", status.as_str());
    }
    let rec = ImageRecord {
        name: name.to_string(),
        captured_at,
        processed_at: Utc::now().naive_utc(),
        foam_pct,
        mask_path,
        status,
        error,
    };
    registry.append(rec.clone())?;
    Ok(rec)
}

enum Outcome {
    Invalid(InvalidImage),
    Failed(Error),
}

fn run_pipeline(name: &str, store: &dyn ImageStore, proc: &Processor) -> std::result::Result<(f64, PathBuf), Outcome> {
    let bytes = store.fetch(name).map_err(Outcome::Failed)?;
    let img = validate_image(&bytes).map_err(Outcome::Invalid)?;
    let seg = segment_foam(&img, &proc.params, &proc.inference).map_err(Outcome::Failed)?;
    let stem = Path::new(name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    std::fs::create_dir_all(&proc.mask_dir)
        .map_err(|e| Outcome::Failed(Error::io(format!("creating {}", proc.mask_dir.display()), e)))?;
    let path = proc.mask_dir.join(format!("{stem}_mask.png"));
    save_mask_png(&seg.mask, &path).map_err(Outcome::Failed)?;
    Ok((seg.foam_pct, path))
}

/// Processes every stored frame missing from the registry, oldest first.
/// Returns the names that were recovered with status OK; failures get
/// INVALID or FAILED rows and do not stop the sweep.
pub fn verify_and_backfill(store: &dyn ImageStore, registry: &mut Registry, proc: &Processor) -> Result<Vec<String>> {
    let missing: Vec<StoreEntry> = store.list_all()?.into_iter().filter(|e| !registry.contains(&e.name)).collect();
    info!("verification: {} unregistered images", missing.len());
    let mut recovered = Vec::new();
    for entry in missing {
        let rec = process_one(&entry.name, store, registry, proc)?;
        if rec.status == Status::Ok {
            recovered.push(rec.name);
        }
    }
    Ok(recovered)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonitorMode {
    /// One verification sweep, then exit.
    Verify,
    /// Poll every interval. `ticks` bounds the number of polls; `day`
    /// overrides the current date.
    Poll { ticks: Option<u64>, day: Option<NaiveDate> },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MonitorSummary {
    pub processed: usize,
    pub ok: usize,
    pub invalid: usize,
    pub failed: usize,
}

impl MonitorSummary {
    fn add(&mut self, rec: &ImageRecord) {
        self.processed += 1;
        match rec.status {
            Status::Ok => self.ok += 1,
            Status::Invalid => self.invalid += 1,
            Status::Failed => self.failed += 1,
        }
    }
}

/// Self-check, then either a verification sweep or the polling loop. The
/// poller and the processor run on separate threads joined by a bounded
/// queue; the poller blocks when the queue is full.
pub fn run_monitor(cfg: &AcquisitionConfig, mode: MonitorMode) -> Result<MonitorSummary> {
    cfg.validate()?;
    let readiness = self_check(cfg);
    for c in &readiness.checks {
        info!("self-check {}: {} ({})", c.component, if c.ok { "ok" } else { "FAILED" }, c.detail);
    }
    if !readiness.ready() {
        let reasons: Vec<String> = readiness.failures().iter().map(|c| format!("{}: {}", c.component, c.detail)).collect();
        return Err(Error::Config(format!("not ready: {}", reasons.join("; "))));
    }
    let store = cfg.store();
    let proc = Processor::load(cfg)?;
    let mut registry = Registry::open(&cfg.registry_path)?;
    let mut summary = MonitorSummary::default();

    match mode {
        MonitorMode::Verify => {
            let before = registry.len();
            verify_and_backfill(&store, &mut registry, &proc)?;
            for rec in &registry.records()[before..] {
                summary.add(rec);
            }
        }
        MonitorMode::Poll { ticks, day } => {
            let registry = Arc::new(Mutex::new(registry));
            let pending: Arc<Mutex<HashSet<String>>> = Arc::default();
            let (tx, rx) = sync_channel::<String>(QUEUE_CAPACITY);
            let interval = cfg.poll_interval;
            thread::scope(|s| {
                let (registry_p, pending_p, store_p) = (registry.clone(), pending.clone(), &store);
                s.spawn(move || {
                    let mut tick = 0u64;
                    while ticks.is_none_or(|t| tick < t) {
                        let today = day.unwrap_or_else(|| chrono::Local::now().date_naive());
                        let found = {
                            let reg = registry_p.lock().expect("registry lock");
                            let pend = pending_p.lock().expect("pending lock");
                            poll_latest_excluding(store_p, &reg, today, &pend)
                        };
                        match found {
                            Ok(Some(name)) => {
                                pending_p.lock().expect("pending lock").insert(name.clone());
                                if tx.send(name).is_err() {
                                    break;
                                }
                            }
                            Ok(None) => {}
                            Err(e) => warn!("poll failed, retrying next tick: {e}"),
                        }
                        tick += 1;
                        if ticks.is_none_or(|t| tick < t) {
                            thread::sleep(interval);
                        }
                    }
                });
                loop {
                    match rx.recv_timeout(Duration::from_millis(200)) {
                        Ok(name) => {
                            let mut reg = registry.lock().expect("registry lock");
                            match process_one(&name, &store, &mut reg, &proc) {
                                Ok(rec) => {
                                    info!("{}: {} foam {:?}", rec.name, rec.status.as_str(), rec.foam_pct);
                                    summary.add(&rec);
                                }
                                Err(e) => error!("{name}: {e}"),
                            }
                            pending.lock().expect("pending lock").remove(&name);
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            });
        }
    }
    Ok(summary)
}
