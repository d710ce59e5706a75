//! Edge-side broker: accepts publisher sessions, stamps and logs every
//! Publish, routes it to subscribers and to an in-process consumer.

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::Sender;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::mqtt::{encode_packet, Packet, PacketReader};

use super::link::{ChunkWrite, Closer, Connection, Listener};
use super::log::{JsonlAppender, ReceiveLogEntry};
use super::payload::{digest, BatchPayload};

/// A Publish as seen by the edge, handed to the inference consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivered {
    pub session: String,
    pub topic: String,
    pub payload: Vec<u8>,
    pub recv_ts_ms: f64,
}

pub struct BrokerConfig {
    pub log: Arc<JsonlAppender<ReceiveLogEntry>>,
    pub forward: Option<Sender<Delivered>>,
    /// How often idle loops re-check for shutdown.
    pub poll: Duration,
}

impl BrokerConfig {
    pub fn in_memory() -> Self {
        Self {
            log: Arc::new(JsonlAppender::memory()),
            forward: None,
            poll: Duration::from_millis(20),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BrokerStats {
    pub connections: u64,
    pub protocol_errors: u64,
    pub takeovers: u64,
    pub sessions_ended: u64,
}

type SharedWriter = Arc<Mutex<Box<dyn ChunkWrite>>>;

struct Registered {
    conn_id: u64,
    closer: Arc<dyn Closer>,
}

struct Shared {
    log: Arc<JsonlAppender<ReceiveLogEntry>>,
    forward: Option<Mutex<Sender<Delivered>>>,
    poll: Duration,
    stop_accepting: AtomicBool,
    abort: AtomicBool,
    next_conn: AtomicU64,
    clients: Mutex<HashMap<String, Registered>>,
    subscriptions: Mutex<HashMap<String, Vec<(u64, SharedWriter)>>>,
    stats: Mutex<BrokerStats>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

pub struct BrokerHandle {
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
    addr: String,
}

/// Start serving on `listener`. Returns immediately; connections are handled
/// on their own threads.
pub fn broker_serve(mut listener: Box<dyn Listener>, config: BrokerConfig) -> BrokerHandle {
    let addr = listener.local_addr();
    let shared = Arc::new(Shared {
        log: config.log,
        forward: config.forward.map(Mutex::new),
        poll: config.poll,
        stop_accepting: AtomicBool::new(false),
        abort: AtomicBool::new(false),
        next_conn: AtomicU64::new(0),
        clients: Mutex::new(HashMap::new()),
        subscriptions: Mutex::new(HashMap::new()),
        stats: Mutex::new(BrokerStats::default()),
        workers: Mutex::new(Vec::new()),
    });
    let s = shared.clone();
    let acceptor = thread::spawn(move || {
        while !s.stop_accepting.load(Ordering::Acquire) {
            match listener.accept(s.poll) {
                Ok(Some(conn)) => {
                    let id = s.next_conn.fetch_add(1, Ordering::Relaxed);
                    s.stats.lock().unwrap().connections += 1;
                    let worker_shared = s.clone();
                    let h = thread::spawn(move || serve_connection(worker_shared, id, conn));
                    s.workers.lock().unwrap().push(h);
                }
                Ok(None) => {}
                Err(_) => break,
            }
        }
    });
    BrokerHandle {
        shared,
        acceptor: Some(acceptor),
        addr,
    }
}

impl BrokerHandle {
    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn receive_log(&self) -> Vec<ReceiveLogEntry> {
        self.shared.log.snapshot()
    }

    pub fn stats(&self) -> BrokerStats {
        *self.shared.stats.lock().unwrap()
    }

    /// Number of sessions that have ended (disconnect, error or takeover).
    pub fn sessions_ended(&self) -> u64 {
        self.shared.stats.lock().unwrap().sessions_ended
    }

    /// Stop accepting and wait for every open connection to finish on its
    /// own (client disconnect or end of stream).
    pub fn shutdown(mut self) -> BrokerStats {
        self.stop();
        self.stats()
    }

    /// Stop accepting and close every open connection.
    pub fn shutdown_now(mut self) -> BrokerStats {
        self.shared.abort.store(true, Ordering::Release);
        for r in self.shared.clients.lock().unwrap().values() {
            r.closer.close();
        }
        self.stop();
        self.stats()
    }

    fn stop(&mut self) {
        self.shared.stop_accepting.store(true, Ordering::Release);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        loop {
            let batch: Vec<_> = self.shared.workers.lock().unwrap().drain(..).collect();
            if batch.is_empty() {
                break;
            }
            for h in batch {
                let _ = h.join();
            }
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.shared.abort.store(true, Ordering::Release);
            for r in self.shared.clients.lock().unwrap().values() {
                r.closer.close();
            }
            self.stop();
        }
    }
}

fn reply(writer: &SharedWriter, packet: &Packet, at_ms: f64) -> io::Result<()> {
    let bytes = encode_packet(packet).expect("broker replies are valid packets");
    writer.lock().unwrap().write_chunk(&bytes, at_ms)
}

fn serve_connection(shared: Arc<Shared>, conn_id: u64, conn: Connection) {
    let Connection {
        mut reader,
        writer,
        closer,
        ..
    } = conn;
    let writer: SharedWriter = Arc::new(Mutex::new(writer));
    let mut inbox = PacketReader::new();
    let mut client_id: Option<String> = None;
    let mut protocol_error = false;

    'conn: loop {
        if closer.is_closed() {
            break;
        }
        let chunk = match reader.read_chunk(Some(shared.poll)) {
            Ok(Some(c)) => c,
            Ok(None) => break,
            Err(e) if e.kind() == io::ErrorKind::TimedOut => {
                if shared.abort.load(Ordering::Acquire) {
                    break;
                }
                continue;
            }
            Err(_) => break,
        };
        // a takeover may have happened while we were blocked
        if closer.is_closed() {
            break;
        }
        inbox.extend(&chunk.bytes);
        loop {
            let packet = match inbox.next_packet() {
                Ok(Some(p)) => p,
                Ok(None) => break,
                Err(_) => {
                    protocol_error = true;
                    break 'conn;
                }
            };
            match (&client_id, packet) {
                (None, Packet::Connect { client_id: id, .. }) => {
                    register(&shared, conn_id, &id, closer.clone());
                    if reply(&writer, &Packet::ConnAck { return_code: 0 }, chunk.at_ms).is_err() {
                        break 'conn;
                    }
                    client_id = Some(id);
                }
                (None, _) | (Some(_), Packet::Connect { .. }) => {
                    protocol_error = true;
                    break 'conn;
                }
                (Some(id), Packet::Publish { topic, payload }) => {
                    on_publish(&shared, id, topic, payload, chunk.at_ms);
                }
                (Some(_), Packet::Subscribe { packet_id, topic }) => {
                    shared
                        .subscriptions
                        .lock()
                        .unwrap()
                        .entry(topic)
                        .or_default()
                        .push((conn_id, writer.clone()));
                    let ack = Packet::SubAck {
                        packet_id,
                        granted_qos: 0,
                    };
                    if reply(&writer, &ack, chunk.at_ms).is_err() {
                        break 'conn;
                    }
                }
                (Some(_), Packet::PingReq) => {
                    if reply(&writer, &Packet::PingResp, chunk.at_ms).is_err() {
                        break 'conn;
                    }
                }
                (Some(_), Packet::Disconnect) => break 'conn,
                (Some(_), Packet::ConnAck { .. } | Packet::SubAck { .. } | Packet::PingResp) => {
                    protocol_error = true;
                    break 'conn;
                }
            }
        }
    }

    if let Some(id) = &client_id {
        let mut clients = shared.clients.lock().unwrap();
        if clients.get(id).is_some_and(|r| r.conn_id == conn_id) {
            clients.remove(id);
        }
    }
    for subs in shared.subscriptions.lock().unwrap().values_mut() {
        subs.retain(|(id, _)| *id != conn_id);
    }
    closer.close();
    let mut stats = shared.stats.lock().unwrap();
    stats.sessions_ended += 1;
    if protocol_error {
        stats.protocol_errors += 1;
    }
}

/// Register a session; an existing session with the same client id is
/// closed first (takeover).
fn register(shared: &Shared, conn_id: u64, client_id: &str, closer: Arc<dyn Closer>) {
    let previous = shared
        .clients
        .lock()
        .unwrap()
        .insert(client_id.to_string(), Registered { conn_id, closer });
    if let Some(prev) = previous {
        prev.closer.close();
        shared.stats.lock().unwrap().takeovers += 1;
    }
}

fn on_publish(shared: &Shared, session: &str, topic: String, payload: Vec<u8>, recv_ts_ms: f64) {
    let entry = match BatchPayload::decode(&payload) {
        Some(b) => ReceiveLogEntry {
            session: session.to_string(),
            seq_no: Some(b.seq_no),
            recv_ts_ms,
            send_ts_ms: Some(b.send_ts_ms),
            digest: digest(&payload),
            samples: b.samples.to_vec(),
            corrupt: false,
        },
        None => ReceiveLogEntry {
            session: session.to_string(),
            seq_no: None,
            recv_ts_ms,
            send_ts_ms: None,
            digest: digest(&payload),
            samples: Vec::new(),
            corrupt: true,
        },
    };
    shared.log.append(&entry);

    let subscribers: Vec<SharedWriter> = shared
        .subscriptions
        .lock()
        .unwrap()
        .get(&topic)
        .map(|v| v.iter().map(|(_, w)| w.clone()).collect())
        .unwrap_or_default();
    if !subscribers.is_empty() {
        let packet = Packet::Publish {
            topic: topic.clone(),
            payload: payload.clone(),
        };
        for w in subscribers {
            // a slow or dead subscriber must not stall the publisher
            let _ = reply(&w, &packet, recv_ts_ms);
        }
    }
    if let Some(fwd) = &shared.forward {
        let _ = fwd.lock().unwrap().send(Delivered {
            session: session.to_string(),
            topic,
            payload,
            recv_ts_ms,
        });
    }
}
