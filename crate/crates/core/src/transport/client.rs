//! Publisher side: the phone forwarding ECG batches to the edge broker.

use std::io;
use std::time::{Duration, Instant};

use crate::clock::Pacer;
use crate::ecg::SampleBatch;
use crate::mqtt::{encode_packet, Packet, PacketReader};
use crate::netem::{ChannelError, NetemChannel, Transmission};

use super::link::{Connection, SimNetwork};
use super::log::{JsonlAppender, SendLogEntry};
use super::payload::{digest, BatchPayload};
use super::TransportError;

pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_KEEP_ALIVE_S: u16 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Connecting,
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub client_id: String,
    pub topic: String,
    pub state: SessionState,
    pub next_seq: u32,
}

pub fn topic_for(client_id: &str) -> String {
    format!("ecg/{client_id}")
}

/// A publish stream that stopped early. `log` holds every batch that was
/// handed to the link before the failure.
#[derive(Debug, thiserror::Error)]
#[error("stream aborted after {} batches: {source}", log.len())]
pub struct PublishError {
    #[source]
    pub source: TransportError,
    pub log: Vec<SendLogEntry>,
}

pub struct Client {
    session: Session,
    conn: Connection,
    inbox: PacketReader,
    /// Virtual (or Unix) time of the last packet handed to the link.
    now_ms: f64,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("session", &self.session).finish()
    }
}

impl Client {
    /// Connect/ConnAck handshake over an open connection.
    pub fn handshake(
        conn: Connection,
        client_id: &str,
        now_ms: f64,
        timeout: Duration,
    ) -> Result<Self, TransportError> {
        let mut client = Self {
            session: Session {
                client_id: client_id.to_string(),
                topic: topic_for(client_id),
                state: SessionState::Connecting,
                next_seq: 0,
            },
            conn,
            inbox: PacketReader::new(),
            now_ms,
        };
        client.send(
            &Packet::Connect {
                client_id: client_id.to_string(),
                keep_alive_s: DEFAULT_KEEP_ALIVE_S,
            },
            now_ms,
        )?;
        match client.expect_packet(timeout)? {
            Packet::ConnAck { return_code: 0 } => {
                client.session.state = SessionState::Active;
                Ok(client)
            }
            Packet::ConnAck { return_code } => Err(TransportError::Refused(return_code)),
            other => Err(TransportError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn connect_sim(net: &SimNetwork, addr: &str, client_id: &str, now_ms: f64) -> Result<Self, TransportError> {
        let conn = net.connect(addr, client_id).map_err(|e| {
            TransportError::Timeout(format!(
                "no ConnAck from {addr} within {DEFAULT_CONNECT_TIMEOUT:?}: {e}"
            ))
        })?;
        Self::handshake(conn, client_id, now_ms, DEFAULT_CONNECT_TIMEOUT)
    }

    pub fn connect_tcp(addr: &str, client_id: &str, timeout: Duration) -> Result<Self, TransportError> {
        let conn = super::link::tcp_connect(addr, timeout)
            .map_err(|e| TransportError::Timeout(format!("cannot reach broker at {addr}: {e}")))?;
        Self::handshake(conn, client_id, crate::clock::unix_ms(), timeout)
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    fn send(&mut self, packet: &Packet, at_ms: f64) -> Result<(), TransportError> {
        let bytes = encode_packet(packet)?;
        self.conn.writer.write_chunk(&bytes, at_ms).map_err(|e| self.lost(e))?;
        self.now_ms = self.now_ms.max(at_ms);
        Ok(())
    }

    fn lost(&mut self, e: io::Error) -> TransportError {
        self.session.state = SessionState::Closed;
        TransportError::ConnectionLost(e.to_string())
    }

    /// Next inbound packet, waiting at most `timeout`.
    fn expect_packet(&mut self, timeout: Duration) -> Result<Packet, TransportError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(p) = self.inbox.next_packet()? {
                return Ok(p);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Timeout(format!("no reply within {timeout:?}")));
            }
            match self.conn.reader.read_chunk(Some(left)) {
                Ok(Some(c)) => self.inbox.extend(&c.bytes),
                Ok(None) => {
                    self.session.state = SessionState::Closed;
                    return Err(TransportError::ConnectionLost("closed by broker".into()));
                }
                Err(e) if e.kind() == io::ErrorKind::TimedOut => continue,
                Err(e) => return Err(self.lost(e)),
            }
        }
    }

    fn ensure_active(&self) -> Result<(), TransportError> {
        if self.session.state == SessionState::Active {
            Ok(())
        } else {
            Err(TransportError::NotActive)
        }
    }

    pub fn ping(&mut self, timeout: Duration) -> Result<(), TransportError> {
        self.ensure_active()?;
        self.send(&Packet::PingReq, self.now_ms)?;
        match self.expect_packet(timeout)? {
            Packet::PingResp => Ok(()),
            other => Err(TransportError::Unexpected(format!("{other:?}"))),
        }
    }

    pub fn subscribe(&mut self, topic: &str, timeout: Duration) -> Result<(), TransportError> {
        self.ensure_active()?;
        self.send(
            &Packet::Subscribe {
                packet_id: 1,
                topic: topic.to_string(),
            },
            self.now_ms,
        )?;
        match self.expect_packet(timeout)? {
            Packet::SubAck { packet_id: 1, .. } => Ok(()),
            other => Err(TransportError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Wait for a Publish routed to this client's subscriptions.
    pub fn next_publish(&mut self, timeout: Duration) -> Result<(String, Vec<u8>), TransportError> {
        match self.expect_packet(timeout)? {
            Packet::Publish { topic, payload } => Ok((topic, payload)),
            other => Err(TransportError::Unexpected(format!("{other:?}"))),
        }
    }

    /// Publish `batches` at their release instants through `channel`.
    ///
    /// Dropped batches are still logged: from the sender's point of view
    /// they were published. A failure aborts the stream and returns the
    /// partial log.
    pub fn publish_stream<I>(
        &mut self,
        batches: I,
        channel: &mut NetemChannel,
        pacer: &Pacer,
        log: Option<&JsonlAppender<SendLogEntry>>,
    ) -> Result<Vec<SendLogEntry>, PublishError>
    where
        I: IntoIterator<Item = SampleBatch>,
    {
        let mut sent = Vec::new();
        if let Err(source) = self.ensure_active() {
            return Err(PublishError { source, log: sent });
        }
        for batch in batches {
            pacer.wait_until(batch.send_ts_ms);
            let bytes = BatchPayload::from_batch(&batch).encode();
            let outcome = match channel.transmit(&bytes, batch.send_ts_ms) {
                Ok(t) => t,
                Err(ChannelError::Disconnected(n)) => {
                    self.session.state = SessionState::Closed;
                    let source = TransportError::ConnectionLost(format!("link dropped after {n} batches"));
                    return Err(PublishError { source, log: sent });
                }
                Err(e) => {
                    return Err(PublishError {
                        source: e.into(),
                        log: sent,
                    })
                }
            };
            if let Transmission::Delivered(ev) = outcome {
                let packet = Packet::Publish {
                    topic: self.session.topic.clone(),
                    payload: ev.payload,
                };
                if let Err(source) = self.send(&packet, ev.deliver_at_ms) {
                    return Err(PublishError { source, log: sent });
                }
            }
            self.now_ms = self.now_ms.max(batch.send_ts_ms);
            let entry = SendLogEntry {
                session: self.session.client_id.clone(),
                seq_no: batch.seq_no,
                send_ts_ms: batch.send_ts_ms,
                digest: digest(&bytes),
                samples: batch.samples.to_vec(),
            };
            if let Some(log) = log {
                log.append(&entry);
            }
            self.session.next_seq = batch.seq_no.wrapping_add(1);
            sent.push(entry);
        }
        Ok(sent)
    }

    /// Orderly close. The Disconnect follows all queued publishes on
    /// `channel`.
    pub fn disconnect(mut self, channel: &mut NetemChannel) -> Result<(), TransportError> {
        self.ensure_active()?;
        let at = channel.pass_through(self.now_ms);
        self.send(&Packet::Disconnect, at)?;
        self.session.state = SessionState::Closed;
        Ok(())
    }
}
