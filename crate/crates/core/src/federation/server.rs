use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, error, info, warn};

use super::aggregate::{aggregate_fit, save_aggregated_model};
use super::codec::{recv_message, send_message, ClientUpdate, Message, MessageType, ProtocolError, DEFAULT_MAX_PAYLOAD};
use crate::metrics::RoundMetrics;
use crate::model::{load_checkpoint, Manifest, ModelParams, ReferenceModel, SegmentationModel, TrainConfig};
use crate::{Error, Result};

pub const METRICS_CSV: &str = "metrics.csv";
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub rounds: u32,
    pub fraction_fit: f64,
    pub fraction_eval: f64,
    pub min_fit: usize,
    pub min_eval: usize,
    pub min_available: usize,
    pub save_dir: PathBuf,
    /// Tensor names and shapes every checkpoint is validated against.
    pub manifest: Manifest,
    pub initial_checkpoint: Option<PathBuf>,
    pub listen: String,
    /// Broadcast with every fit instruction; the seed is offset by
    /// `round - 1`.
    pub train: TrainConfig,
    pub eval_samples: u32,
    /// Clients that have not answered within this window are dropped for
    /// the round.
    pub round_timeout: Duration,
    /// How long to wait for `min_available` clients. `None` waits forever.
    pub join_timeout: Option<Duration>,
    pub max_payload: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            fraction_fit: 1.0,
            fraction_eval: 1.0,
            min_fit: 2,
            min_eval: 2,
            min_available: 2,
            save_dir: PathBuf::from("checkpoints"),
            manifest: ReferenceModel.manifest(),
            initial_checkpoint: None,
            listen: "0.0.0.0:8765".into(),
            train: TrainConfig::default(),
            eval_samples: 10,
            round_timeout: Duration::from_secs(600),
            join_timeout: None,
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        for (name, f) in [("fraction_fit", self.fraction_fit), ("fraction_eval", self.fraction_eval)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} = {f} outside (0, 1]")));
            }
        }
        if self.min_fit == 0 || self.min_eval == 0 || self.min_available == 0 {
            return Err(Error::Config("minimum client counts must be >= 1".into()));
        }
        self.train.validate()
    }
}

/// Outcome of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: u32,
    /// Ids of the clients whose updates were aggregated.
    pub clients: Vec<u32>,
    pub fit: RoundMetrics,
    pub eval: Option<RoundMetrics>,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug)]
pub struct TrainingLog {
    pub rounds: Vec<RoundLog>,
    pub final_params: ModelParams,
    pub metrics_csv: PathBuf,
}

struct ClientConn {
    id: u32,
    name: String,
    stream: TcpStream,
}

#[derive(Default)]
struct Pool {
    conns: Vec<ClientConn>,
    next_id: u32,
}

type SharedPool = Arc<(Mutex<Pool>, Condvar)>;

/// Cheap handle for observing a running server.
#[derive(Clone)]
pub struct ServerHandle {
    pool: SharedPool,
    addr: SocketAddr,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Number of clients that have joined so far.
    pub fn joined(&self) -> u32 {
        self.pool.0.lock().expect("pool lock").next_id
    }
}

pub struct Server {
    cfg: ServerConfig,
    listener: TcpListener,
    pool: SharedPool,
}

/// Binds, runs every round and shuts the clients down.
pub fn server_run(cfg: ServerConfig) -> Result<TrainingLog> {
    Server::bind(cfg)?.run()
}

impl Server {
    pub fn bind(cfg: ServerConfig) -> Result<Self> {
        cfg.validate()?;
        let listener = TcpListener::bind(&cfg.listen).map_err(|e| Error::io(format!("binding {}", cfg.listen), e))?;
        Ok(Self {
            cfg,
            listener,
            pool: Arc::default(),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    pub fn handle(&self) -> ServerHandle {
        ServerHandle {
            pool: self.pool.clone(),
            addr: self.local_addr(),
        }
    }

    pub fn run(self) -> Result<TrainingLog> {
        let stop = Arc::new(AtomicBool::new(false));
        self.listener.set_nonblocking(true)?;
        let listener = self.listener.try_clone()?;
        let acceptor = {
            let (pool, stop, max_payload) = (self.pool.clone(), stop.clone(), self.cfg.max_payload);
            thread::spawn(move || accept_loop(listener, pool, stop, max_payload))
        };
        info!("server listening on {}", self.local_addr());
        let result = self.rounds();
        stop.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        let mut pool = self.pool.0.lock().expect("pool lock");
        match &result {
            Ok(log) => {
                let msg = Message::Shutdown {
                    params: log.final_params.clone(),
                };
                for c in pool.conns.iter_mut() {
                    if let Err(e) = send_message(&mut c.stream, &msg) {
                        warn!("client {} ({}) missed shutdown: {e}", c.id, c.name);
                    }
                }
            }
            Err(e) => {
                error!("federation aborted: {e}");
                let msg = Message::Error(e.to_string());
                for c in pool.conns.iter_mut() {
                    let _ = send_message(&mut c.stream, &msg);
                }
            }
        }
        pool.conns.clear();
        result
    }

    fn rounds(&self) -> Result<TrainingLog> {
        let cfg = &self.cfg;
        let mut theta = cfg.manifest.zeros();
        if let Some(path) = &cfg.initial_checkpoint {
            theta.load_from(&load_checkpoint(path)?)?;
            info!("initial parameters from {}", path.display());
        }
        std::fs::create_dir_all(&cfg.save_dir).map_err(|e| Error::io(format!("creating {}", cfg.save_dir.display()), e))?;
        let csv_path = cfg.save_dir.join(METRICS_CSV);
        let mut csv = csv::Writer::from_path(&csv_path).map_err(|e| Error::Federation(format!("{}: {e}", csv_path.display())))?;
        csv_row(&mut csv, ["round", "loss", "iou", "pixel_accuracy", "dice"].map(String::from))?;

        info!("waiting for {} clients", cfg.min_available);
        if self.wait_for(cfg.min_available, cfg.join_timeout) < cfg.min_available {
            return Err(Error::Federation(format!("fewer than {} clients joined", cfg.min_available)));
        }

        let mut fit_cursor = None;
        let mut eval_cursor = None;
        let mut rounds = Vec::with_capacity(cfg.rounds as usize);
        for round in 1..=cfg.rounds {
            let updates = self.fit_round(round, &theta, &mut fit_cursor)?;
            let clients: Vec<u32> = updates.iter().map(|(id, _, _)| *id).collect();
            let updates: Vec<ClientUpdate> = updates.into_iter().map(|(_, _, u)| u).collect();
            let (params, fit) = aggregate_fit(round, &updates)?
                .ok_or_else(|| Error::Federation(format!("round {round}: nothing to aggregate")))?;
            theta = params;
            let saved = save_aggregated_model(&cfg.save_dir, round, &theta, &cfg.manifest)?;
            csv_row(
                &mut csv,
                [round as f64, fit.loss, fit.iou, fit.pixel_accuracy, fit.dice].map(|v| v.to_string()),
            )?;
            let eval = self.evaluate_round(round, &theta, &mut eval_cursor);
            rounds.push(RoundLog {
                round,
                clients,
                fit,
                eval,
                checkpoint: saved.path,
            });
        }
        Ok(TrainingLog {
            rounds,
            final_params: theta,
            metrics_csv: csv_path,
        })
    }

    /// Blocks until `n` clients are connected or the timeout passes;
    /// returns the number available.
    fn wait_for(&self, n: usize, timeout: Option<Duration>) -> usize {
        let (lock, cv) = &*self.pool;
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut pool = lock.lock().expect("pool lock");
        while pool.conns.len() < n {
            match deadline {
                None => pool = cv.wait(pool).expect("pool lock"),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        break;
                    }
                    pool = cv.wait_timeout(pool, d - now).expect("pool lock").0;
                }
            }
        }
        pool.conns.len()
    }

    fn take_selection(&self, fraction: f64, min: usize, cursor: &mut Option<u32>) -> Vec<ClientConn> {
        let mut pool = self.pool.0.lock().expect("pool lock");
        select_round_robin(&mut pool.conns, fraction, min, cursor)
    }

    fn give_back(&self, conns: Vec<ClientConn>) {
        let mut pool = self.pool.0.lock().expect("pool lock");
        pool.conns.extend(conns);
        pool.conns.sort_by_key(|c| c.id);
    }

    /// Runs one fit round, retrying once if too few clients answer.
    /// Returns `(client id, client name, update)` sorted by name then id.
    fn fit_round(&self, round: u32, theta: &ModelParams, cursor: &mut Option<u32>) -> Result<Vec<(u32, String, ClientUpdate)>> {
        let cfg = &self.cfg;
        let config = TrainConfig {
            seed: cfg.train.seed.wrapping_add(round as u64 - 1),
            ..cfg.train
        };
        let msg = Message::FitInstruction {
            round,
            config,
            params: theta.clone(),
        };
        let manifest = theta.manifest();
        for attempt in 0..2 {
            self.wait_for(cfg.min_fit, Some(cfg.round_timeout));
            let selected = self.take_selection(cfg.fraction_fit, cfg.min_fit, cursor);
            info!(
                "round {round}: fit on clients {:?}{}",
                selected.iter().map(|c| c.id).collect::<Vec<_>>(),
                if attempt > 0 { " (retry)" } else { "" }
            );
            let replies = self.exchange(selected, &msg, MessageType::FitResult);
            let mut updates = Vec::new();
            for (id, name, reply) in replies {
                match reply {
                    Message::FitResult(u) if u.params.manifest() == manifest && u.num_samples > 0 && u.params.is_finite() => {
                        updates.push((id, name, u))
                    }
                    Message::FitResult(_) => warn!("round {round}: client {id} sent an invalid update, excluded"),
                    other => warn!("round {round}: client {id} replied {:?}, excluded", other.msg_type()),
                }
            }
            if updates.len() >= cfg.min_fit {
                updates.sort_by(|a, b| (&a.1, a.0).cmp(&(&b.1, b.0)));
                return Ok(updates);
            }
            warn!("round {round}: {} of at least {} updates received", updates.len(), cfg.min_fit);
        }
        Err(Error::Federation(format!("round {round}: fewer than {} clients completed after retry", cfg.min_fit)))
    }

    fn evaluate_round(&self, round: u32, theta: &ModelParams, cursor: &mut Option<u32>) -> Option<RoundMetrics> {
        let cfg = &self.cfg;
        let msg = Message::EvaluateInstruction {
            round,
            n_samples: cfg.eval_samples,
            params: theta.clone(),
        };
        let selected = self.take_selection(cfg.fraction_eval, cfg.min_eval, cursor);
        let mut results: Vec<(u32, String, RoundMetrics, u64)> = self
            .exchange(selected, &msg, MessageType::EvaluateResult)
            .into_iter()
            .filter_map(|(id, name, reply)| match reply {
                Message::EvaluateResult { metrics, n_samples } if n_samples > 0 && metrics.is_finite() => Some((id, name, metrics, n_samples)),
                _ => {
                    warn!("round {round}: client {id} evaluation excluded");
                    None
                }
            })
            .collect();
        if results.len() < cfg.min_eval {
            warn!("round {round}: only {} evaluation results", results.len());
            return None;
        }
        results.sort_by(|a, b| (&a.1, a.0).cmp(&(&b.1, b.0)));
        let m = RoundMetrics::weighted_average(results.iter().map(|r| (&r.2, r.3)))?;
        info!(
            "round {round}: evaluation loss {:.4} iou {:.4} acc {:.4} dice {:.4}",
            m.loss, m.iou, m.pixel_accuracy, m.dice
        );
        Some(m)
    }

    /// Sends `msg` to every selected client in parallel and waits for one
    /// reply each. Clients that fail or time out are dropped from the pool;
    /// the rest are returned to it.
    fn exchange(&self, selected: Vec<ClientConn>, msg: &Message, expect: MessageType) -> Vec<(u32, String, Message)> {
        let frame = match msg.to_frame() {
            Ok(f) => f,
            Err(e) => {
                error!("cannot encode {:?}: {e}", msg.msg_type());
                self.give_back(selected);
                return Vec::new();
            }
        };
        let (timeout, max_payload) = (self.cfg.round_timeout, self.cfg.max_payload);
        let outcomes: Vec<(ClientConn, std::result::Result<Message, ProtocolError>)> = thread::scope(|s| {
            let handles: Vec<_> = selected
                .into_iter()
                .map(|mut c| {
                    let frame = &frame;
                    s.spawn(move || {
                        let r = (|| {
                            c.stream.set_read_timeout(Some(timeout))?;
                            super::codec::write_frame(&mut c.stream, frame)?;
                            let reply = recv_message(&mut c.stream, max_payload)?;
                            if reply.msg_type() != expect && reply.msg_type() != MessageType::Error {
                                return Err(ProtocolError::Unexpected {
                                    expected: expect.name(),
                                    got: reply.msg_type().name(),
                                });
                            }
                            Ok(reply)
                        })();
                        (c, r)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("client handler panicked")).collect()
        });
        let mut alive = Vec::new();
        let mut replies = Vec::new();
        for (conn, r) in outcomes {
            match r {
                Ok(reply) => {
                    replies.push((conn.id, conn.name.clone(), reply));
                    alive.push(conn);
                }
                Err(e) => warn!("client {} ({}) dropped: {e}", conn.id, conn.name),
            }
        }
        self.give_back(alive);
        replies
    }
}

/// Takes `max(⌈fraction·n⌉, min)` clients (capped at `n`) from a pool
/// ordered by join id, continuing after the last client picked.
fn select_round_robin(pool: &mut Vec<ClientConn>, fraction: f64, min: usize, cursor: &mut Option<u32>) -> Vec<ClientConn> {
    let n = pool.len();
    if n == 0 {
        return Vec::new();
    }
    let k = ((fraction * n as f64).ceil() as usize).max(min).min(n);
    let start = cursor.and_then(|last| pool.iter().position(|c| c.id > last)).unwrap_or(0);
    let mut picks: Vec<usize> = (0..k).map(|j| (start + j) % n).collect();
    *cursor = Some(pool[*picks.last().expect("k >= 1")].id);
    picks.sort_unstable();
    let mut taken: Vec<ClientConn> = picks.into_iter().rev().map(|i| pool.remove(i)).collect();
    taken.reverse();
    taken
}

fn csv_row(w: &mut csv::Writer<std::fs::File>, row: [String; 5]) -> Result<()> {
    w.write_record(&row).map_err(|e| Error::Federation(format!("writing metrics: {e}")))?;
    w.flush()?;
    Ok(())
}

fn accept_loop(listener: TcpListener, pool: SharedPool, stop: Arc<AtomicBool>, max_payload: u64) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, addr)) => {
                let pool = pool.clone();
                thread::spawn(move || {
                    if let Err(e) = handshake(stream, &pool, max_payload) {
                        warn!("rejected connection from {addr}: {e}");
                    }
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn handshake(mut stream: TcpStream, pool: &SharedPool, max_payload: u64) -> std::result::Result<(), ProtocolError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let name = match recv_message(&mut stream, max_payload)? {
        Message::JoinRequest { name } => name,
        other => {
            let _ = send_message(&mut stream, &Message::Error("expected JoinRequest".into()));
            return Err(ProtocolError::Unexpected {
                expected: "JoinRequest",
                got: other.msg_type().name(),
            });
        }
    };
    let (lock, cv) = &**pool;
    let mut p = lock.lock().expect("pool lock");
    let id = p.next_id;
    send_message(&mut stream, &Message::JoinAck { client_id: id })?;
    p.next_id += 1;
    debug!("client {id} ({name}) joined");
    p.conns.push(ClientConn { id, name, stream });
    p.conns.sort_by_key(|c| c.id);
    cv.notify_all();
    Ok(())
}

/// Lists `federated_round_*.fp` checkpoints in `dir`, ordered by round.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))? {
        let path = entry?.path();
        let round = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("federated_round_"))
            .and_then(|n| n.strip_suffix(".fp"))
            .and_then(|r| r.parse().ok());
        if let Some(r) = round {
            out.push((r, path));
        }
    }
    out.sort();
    Ok(out)
}
