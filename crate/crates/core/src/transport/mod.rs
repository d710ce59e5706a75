//! Phone-to-edge transport: publisher client, broker, wire payload and the
//! analysis logs both sides write.

pub mod broker;
pub mod client;
pub mod link;
pub mod log;
pub mod payload;
pub mod proxy;

use thiserror::Error;

use crate::mqtt::CodecError;
use crate::netem::ChannelError;

pub use broker::{broker_serve, BrokerConfig, BrokerHandle, BrokerStats, Delivered};
pub use client::{topic_for, Client, PublishError, Session, SessionState};
pub use link::{SimNetwork, TcpChunkListener};
pub use log::{load_log, JsonlAppender, LoadedLog, ReceiveLogEntry, SendLogEntry};
pub use payload::{BatchPayload, PAYLOAD_LEN};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("connection refused by broker (return code {0})")]
    Refused(u8),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("session is not active")]
    NotActive,
    #[error("unexpected packet {0}")]
    Unexpected(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
