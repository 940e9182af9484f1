//! Federated averaging over an owned TCP protocol: parameter and frame
//! codecs, aggregation and checkpointing, the round-driving server, the
//! training client and an in-process loopback simulation.

mod aggregate;
mod client;
mod codec;
mod server;
mod simulate;

pub use aggregate::{aggregate_fit, checkpoint_name, save_aggregated_model, SavedModel};
pub use client::{client_run, client_run_prepared, ClientConfig, ClientOutcome};
pub use codec::{
    deserialize_params, read_frame, recv_message, send_message, serialize_params, write_frame, ClientUpdate, Frame, Message, MessageType,
    ProtocolError, DEFAULT_MAX_PAYLOAD, HEADER_LEN, MAGIC,
};
pub use server::{list_checkpoints, server_run, RoundLog, Server, ServerConfig, ServerHandle, TrainingLog, METRICS_CSV};
pub use simulate::{desk_train_config, simulate, simulation_dataset, CorpusSpec, SimulationConfig, SimulationReport};
