//! Byte-stream connections carrying a delivery timestamp with every chunk.
//!
//! Two implementations share one interface: an in-process simulated
//! network, where a chunk's timestamp is its virtual delivery instant, and
//! TCP, where the reader stamps chunks with the wall clock on arrival and a
//! delay line realizes emulated latency on the writer side.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::clock::unix_ms;

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub bytes: Vec<u8>,
    pub at_ms: f64,
}

pub trait ChunkRead: Send {
    /// `Ok(None)` on orderly end of stream; `ErrorKind::TimedOut` when
    /// nothing arrived within `timeout`.
    fn read_chunk(&mut self, timeout: Option<Duration>) -> io::Result<Option<Chunk>>;
}

pub trait ChunkWrite: Send {
    /// Queue `bytes` for delivery at `at_ms` (virtual or Unix ms).
    fn write_chunk(&mut self, bytes: &[u8], at_ms: f64) -> io::Result<()>;
}

pub trait Closer: Send + Sync {
    fn close(&self);
    fn is_closed(&self) -> bool;
}

pub struct Connection {
    pub reader: Box<dyn ChunkRead>,
    pub writer: Box<dyn ChunkWrite>,
    pub closer: Arc<dyn Closer>,
    pub peer: String,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection").field("peer", &self.peer).finish()
    }
}

pub trait Listener: Send {
    /// Wait up to `timeout` for the next inbound connection.
    fn accept(&mut self, timeout: Duration) -> io::Result<Option<Connection>>;
    fn local_addr(&self) -> String;
}

fn timed_out() -> io::Error {
    io::Error::new(io::ErrorKind::TimedOut, "no data within timeout")
}

// ---------------------------------------------------------------- simulated

struct SimReader {
    rx: Receiver<Chunk>,
    closed: Arc<AtomicBool>,
}

impl ChunkRead for SimReader {
    fn read_chunk(&mut self, timeout: Option<Duration>) -> io::Result<Option<Chunk>> {
        if self.closed.load(Ordering::Acquire) {
            return Ok(None);
        }
        let got = match timeout {
            Some(t) => self.rx.recv_timeout(t),
            None => self.rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
        };
        match got {
            Ok(c) => Ok(Some(c)),
            Err(RecvTimeoutError::Timeout) => Err(timed_out()),
            Err(RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

struct SimWriter {
    tx: Sender<Chunk>,
    closed: Arc<AtomicBool>,
}

impl ChunkWrite for SimWriter {
    fn write_chunk(&mut self, bytes: &[u8], at_ms: f64) -> io::Result<()> {
        if self.closed.load(Ordering::Acquire) {
            return Err(io::Error::new(io::ErrorKind::BrokenPipe, "connection closed"));
        }
        self.tx
            .send(Chunk {
                bytes: bytes.to_vec(),
                at_ms,
            })
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer gone"))
    }
}

struct FlagCloser(Arc<AtomicBool>);

impl Closer for FlagCloser {
    fn close(&self) {
        self.0.store(true, Ordering::Release);
    }

    fn is_closed(&self) -> bool {
        self.0.load(Ordering::Acquire)
    }
}

/// Registry of in-process listeners keyed by address.
#[derive(Clone, Default)]
pub struct SimNetwork {
    listeners: Arc<Mutex<HashMap<String, Sender<Connection>>>>,
}

impl SimNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn listen(&self, addr: &str) -> io::Result<SimListener> {
        let mut map = self.listeners.lock().unwrap();
        if map.contains_key(addr) {
            return Err(io::Error::new(io::ErrorKind::AddrInUse, addr.to_string()));
        }
        let (tx, rx) = mpsc::channel();
        map.insert(addr.to_string(), tx);
        Ok(SimListener {
            addr: addr.to_string(),
            rx,
            net: self.clone(),
        })
    }

    /// Open a connection; the returned end belongs to the client.
    pub fn connect(&self, addr: &str, peer: &str) -> io::Result<Connection> {
        let listener = self
            .listeners
            .lock()
            .unwrap()
            .get(addr)
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::ConnectionRefused, addr.to_string()))?;
        let closed = Arc::new(AtomicBool::new(false));
        let (up_tx, up_rx) = mpsc::channel();
        let (down_tx, down_rx) = mpsc::channel();
        let server = Connection {
            reader: Box::new(SimReader {
                rx: up_rx,
                closed: closed.clone(),
            }),
            writer: Box::new(SimWriter {
                tx: down_tx,
                closed: closed.clone(),
            }),
            closer: Arc::new(FlagCloser(closed.clone())),
            peer: peer.to_string(),
        };
        listener
            .send(server)
            .map_err(|_| io::Error::new(io::ErrorKind::ConnectionRefused, addr.to_string()))?;
        // The client keeps its own flag; a server-side close surfaces to it
        // as end of stream once the server drops its writer.
        let client_closed = Arc::new(AtomicBool::new(false));
        Ok(Connection {
            reader: Box::new(SimReader {
                rx: down_rx,
                closed: client_closed.clone(),
            }),
            writer: Box::new(SimWriter {
                tx: up_tx,
                closed: client_closed.clone(),
            }),
            closer: Arc::new(FlagCloser(client_closed)),
            peer: addr.to_string(),
        })
    }
}

pub struct SimListener {
    addr: String,
    rx: Receiver<Connection>,
    net: SimNetwork,
}

impl Listener for SimListener {
    fn accept(&mut self, timeout: Duration) -> io::Result<Option<Connection>> {
        match self.rx.recv_timeout(timeout) {
            Ok(c) => Ok(Some(c)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(io::Error::new(io::ErrorKind::NotConnected, "listener closed")),
        }
    }

    fn local_addr(&self) -> String {
        self.addr.clone()
    }
}

impl Drop for SimListener {
    fn drop(&mut self) {
        self.net.listeners.lock().unwrap().remove(&self.addr);
    }
}

// ---------------------------------------------------------------------- TCP

struct TcpReader {
    stream: TcpStream,
    buf: Box<[u8]>,
}

impl ChunkRead for TcpReader {
    fn read_chunk(&mut self, timeout: Option<Duration>) -> io::Result<Option<Chunk>> {
        self.stream.set_read_timeout(timeout)?;
        match self.stream.read(&mut self.buf) {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(Chunk {
                bytes: self.buf[..n].to_vec(),
                at_ms: unix_ms(),
            })),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Err(timed_out()),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// Writes immediately; the timestamp is ignored.
struct TcpWriter(TcpStream);

impl ChunkWrite for TcpWriter {
    fn write_chunk(&mut self, bytes: &[u8], _at_ms: f64) -> io::Result<()> {
        self.0.write_all(bytes)
    }
}

struct TcpCloser {
    stream: TcpStream,
    closed: AtomicBool,
}

impl Closer for TcpCloser {
    fn close(&self) {
        self.closed.store(true, Ordering::Release);
        let _ = self.stream.shutdown(Shutdown::Both);
    }

    fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }
}

/// Holds each chunk until the wall clock reaches its timestamp, then
/// writes it. Chunks leave in submission order.
pub struct DelayLine {
    tx: Option<Sender<Chunk>>,
    failed: Arc<Mutex<Option<io::ErrorKind>>>,
    worker: Option<JoinHandle<()>>,
}

impl DelayLine {
    pub fn new<W: Write + Send + 'static>(mut sink: W) -> Self {
        let (tx, rx) = mpsc::channel::<Chunk>();
        let failed = Arc::new(Mutex::new(None));
        let flag = failed.clone();
        let worker = thread::spawn(move || {
            for chunk in rx {
                let wait = chunk.at_ms - unix_ms();
                if wait > 0.0 {
                    thread::sleep(Duration::from_secs_f64(wait / 1000.0));
                }
                if let Err(e) = sink.write_all(&chunk.bytes).and_then(|_| sink.flush()) {
                    *flag.lock().unwrap() = Some(e.kind());
                    return;
                }
            }
        });
        Self {
            tx: Some(tx),
            failed,
            worker: Some(worker),
        }
    }
}

impl ChunkWrite for DelayLine {
    fn write_chunk(&mut self, bytes: &[u8], at_ms: f64) -> io::Result<()> {
        if let Some(kind) = *self.failed.lock().unwrap() {
            return Err(io::Error::new(kind, "delayed write failed"));
        }
        self.tx
            .as_ref()
            .expect("sender lives until drop")
            .send(Chunk {
                bytes: bytes.to_vec(),
                at_ms,
            })
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "delay line stopped"))
    }
}

impl Drop for DelayLine {
    fn drop(&mut self) {
        // flush everything still in flight before the socket goes away
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn tcp_connection(stream: TcpStream, delayed_writes: bool) -> io::Result<Connection> {
    stream.set_nodelay(true)?;
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "?".into());
    let writer: Box<dyn ChunkWrite> = if delayed_writes {
        Box::new(DelayLine::new(stream.try_clone()?))
    } else {
        Box::new(TcpWriter(stream.try_clone()?))
    };
    Ok(Connection {
        reader: Box::new(TcpReader {
            stream: stream.try_clone()?,
            buf: vec![0u8; 16 * 1024].into_boxed_slice(),
        }),
        writer,
        closer: Arc::new(TcpCloser {
            stream,
            closed: AtomicBool::new(false),
        }),
        peer,
    })
}

/// Client side of a TCP connection. Writes pass through a [`DelayLine`],
/// so chunk timestamps (Unix ms) decide when bytes hit the socket.
pub fn tcp_connect(addr: &str, timeout: Duration) -> io::Result<Connection> {
    let mut last = io::Error::new(io::ErrorKind::AddrNotAvailable, addr.to_string());
    for sa in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&sa, timeout) {
            Ok(s) => return tcp_connection(s, true),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Wrap an already-connected stream (proxy upstreams, tests).
pub fn tcp_wrap(stream: TcpStream, delayed_writes: bool) -> io::Result<Connection> {
    tcp_connection(stream, delayed_writes)
}

pub struct TcpChunkListener {
    inner: TcpListener,
}

impl TcpChunkListener {
    pub fn bind(addr: &str) -> io::Result<Self> {
        let inner = TcpListener::bind(addr)?;
        inner.set_nonblocking(true)?;
        Ok(Self { inner })
    }
}

impl Listener for TcpChunkListener {
    fn accept(&mut self, timeout: Duration) -> io::Result<Option<Connection>> {
        let step = Duration::from_millis(5);
        let mut waited = Duration::ZERO;
        loop {
            match self.inner.accept() {
                Ok((s, _)) => {
                    s.set_nonblocking(false)?;
                    return tcp_connection(s, false).map(Some);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if waited >= timeout {
                        return Ok(None);
                    }
                    thread::sleep(step);
                    waited += step;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn local_addr(&self) -> String {
        self.inner.local_addr().map(|a| a.to_string()).unwrap_or_default()
    }
}
