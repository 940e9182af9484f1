use std::net::TcpStream;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use log::{info, warn};

use super::codec::{recv_message, send_message, ClientUpdate, Message, ProtocolError, DEFAULT_MAX_PAYLOAD};
use crate::dataset::SamplePair;
use crate::metrics::LossConfig;
use crate::model::{evaluate_prepared, prepare_dataset, save_checkpoint, train_prepared, ModelParams, PreparedSample, SegmentationModel, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub server: String,
    pub name: String,
    /// Replaces the server's training configuration; the seed is still
    /// offset by `round - 1`.
    pub train_override: Option<TrainConfig>,
    /// Where the final model is written on shutdown.
    pub final_model: Option<PathBuf>,
    /// Connection attempts before giving up.
    pub attempts: u32,
    /// First retry delay; doubled after every failure.
    pub backoff: Duration,
    pub max_payload: u64,
}

impl ClientConfig {
    pub fn new(server: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            server: server.into(),
            name: name.into(),
            train_override: None,
            final_model: None,
            attempts: 3,
            backoff: Duration::from_millis(250),
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ClientOutcome {
    pub client_id: u32,
    pub fit_rounds: u32,
    pub eval_rounds: u32,
    pub final_params: Option<ModelParams>,
}

enum SessionError {
    Connection(ProtocolError),
    Fatal(Error),
}

impl From<ProtocolError> for SessionError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Io(_) | ProtocolError::Closed | ProtocolError::Truncated { .. } => SessionError::Connection(e),
            other => SessionError::Fatal(other.into()),
        }
    }
}

impl From<Error> for SessionError {
    fn from(e: Error) -> Self {
        SessionError::Fatal(e)
    }
}

/// Joins the server and serves fit/evaluate instructions until shutdown.
/// Only parameters and metrics are ever sent back.
pub fn client_run<M: SegmentationModel>(model: &M, cfg: &ClientConfig, dataset: &[SamplePair]) -> Result<ClientOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prepared = prepare_dataset(dataset)?;
    client_run_prepared(model, cfg, &prepared)
}

pub fn client_run_prepared<M: SegmentationModel>(model: &M, cfg: &ClientConfig, data: &[PreparedSample]) -> Result<ClientOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut outcome = ClientOutcome::default();
    let mut failures = 0u32;
    loop {
        let attempt = TcpStream::connect(&cfg.server)
            .map_err(ProtocolError::from)
            .map_err(SessionError::Connection)
            .and_then(|stream| session(model, cfg, data, stream, &mut outcome));
        match attempt {
            Ok(()) => return Ok(outcome),
            Err(SessionError::Fatal(e)) => return Err(e),
            Err(SessionError::Connection(e)) => {
                failures += 1;
                if failures >= cfg.attempts.max(1) {
                    return Err(Error::Federation(format!(
                        "giving up on {} after {failures} attempts: {e}",
                        cfg.server
                    )));
                }
                let delay = cfg.backoff * 2u32.pow(failures - 1);
                warn!("connection to {} failed ({e}); retrying in {delay:?}", cfg.server);
                thread::sleep(delay);
            }
        }
    }
}

fn session<M: SegmentationModel>(
    model: &M,
    cfg: &ClientConfig,
    data: &[PreparedSample],
    mut stream: TcpStream,
    outcome: &mut ClientOutcome,
) -> std::result::Result<(), SessionError> {
    stream.set_nodelay(true).map_err(ProtocolError::from)?;
    send_message(&mut stream, &Message::JoinRequest { name: cfg.name.clone() })?;
    match recv_message(&mut stream, cfg.max_payload)? {
        Message::JoinAck { client_id } => {
            outcome.client_id = client_id;
            info!("{} joined as client {client_id}", cfg.name);
        }
        Message::Error(text) => return Err(Error::Federation(format!("server refused join: {text}")).into()),
        other => {
            return Err(ProtocolError::Unexpected {
                expected: "JoinAck",
                got: other.msg_type().name(),
            }
            .into())
        }
    }
    let mut loss = LossConfig::default();
    loop {
        match recv_message(&mut stream, cfg.max_payload)? {
            Message::FitInstruction { round, config, params } => {
                let config = match &cfg.train_override {
                    Some(o) => TrainConfig {
                        seed: o.seed.wrapping_add(round as u64 - 1),
                        ..*o
                    },
                    None => config,
                };
                loss = config.loss;
                let reply = set_parameters(model, &params)
                    .and_then(|local| train_prepared(model, &local, data, &config))
                    .map(|(params, metrics)| {
                        Message::FitResult(ClientUpdate {
                            params,
                            num_samples: data.len() as u64,
                            metrics,
                        })
                    });
                reply_or_fail(&mut stream, reply)?;
                outcome.fit_rounds += 1;
                info!("{}: round {round} fit done", cfg.name);
            }
            Message::EvaluateInstruction { round, n_samples, params } => {
                let reply = set_parameters(model, &params)
                    .and_then(|local| evaluate_prepared(model, &local, data, n_samples as usize, &loss, round as u64))
                    .map(|metrics| Message::EvaluateResult {
                        metrics,
                        n_samples: (n_samples as usize).min(data.len()) as u64,
                    });
                reply_or_fail(&mut stream, reply)?;
                outcome.eval_rounds += 1;
            }
            Message::Shutdown { params } => {
                let local = set_parameters(model, &params)?;
                if let Some(path) = &cfg.final_model {
                    save_checkpoint(&local, path)?;
                    info!("{}: final model written to {}", cfg.name, path.display());
                }
                outcome.final_params = Some(local);
                return Ok(());
            }
            Message::Error(text) => return Err(Error::Federation(format!("server error: {text}")).into()),
            other => {
                return Err(ProtocolError::Unexpected {
                    expected: "an instruction",
                    got: other.msg_type().name(),
                }
                .into())
            }
        }
    }
}

/// Loads received tensors into the local model by name and shape.
fn set_parameters<M: SegmentationModel>(model: &M, received: &ModelParams) -> Result<ModelParams> {
    let mut local = model.init_params();
    local.load_from(received)?;
    Ok(local)
}

fn reply_or_fail(stream: &mut TcpStream, reply: Result<Message>) -> std::result::Result<(), SessionError> {
    match reply {
        Ok(msg) => Ok(send_message(stream, &msg)?),
        Err(e) => {
            let _ = send_message(stream, &Message::Error(e.to_string()));
            Err(SessionError::Fatal(e))
        }
    }
}
