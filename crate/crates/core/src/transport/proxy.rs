//! Standalone TCP proxy that impairs the client-to-broker direction with a
//! channel profile. Publish packets carrying a batch payload are delayed,
//! corrupted or dropped; every other packet is only kept in order.

use std::io::{self, Read};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::clock::unix_ms;
use crate::mqtt::{encode_packet, Packet, PacketReader};
use crate::netem::{ChannelProfile, NetemChannel, Transmission};

use super::link::{ChunkWrite, DelayLine};
use super::payload::PAYLOAD_LEN;

pub struct ProxyHandle {
    addr: String,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ProxyHandle {
    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn start_proxy(listen: &str, upstream: &str, profile: ChannelProfile) -> io::Result<ProxyHandle> {
    profile
        .validate()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(listen)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?.to_string();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let upstream = upstream.to_string();
    let next_id = AtomicU64::new(0);
    let acceptor = thread::spawn(move || {
        while !flag.load(Ordering::Acquire) {
            match listener.accept() {
                Ok((client, _)) => {
                    let id = next_id.fetch_add(1, Ordering::Relaxed);
                    let profile = profile.clone();
                    let upstream = upstream.clone();
                    thread::spawn(move || {
                        if let Err(e) = relay(client, &upstream, profile, id) {
                            eprintln!("proxy connection {id}: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(5));
                }
                Err(_) => break,
            }
        }
    });
    Ok(ProxyHandle {
        addr,
        stop,
        acceptor: Some(acceptor),
    })
}

fn relay(client: TcpStream, upstream: &str, profile: ChannelProfile, id: u64) -> io::Result<()> {
    client.set_nonblocking(false)?;
    client.set_nodelay(true)?;
    let server = TcpStream::connect(upstream)?;
    server.set_nodelay(true)?;

    // downlink: untouched
    let mut down_src = server.try_clone()?;
    let mut down_dst = client.try_clone()?;
    let downlink = thread::spawn(move || {
        let _ = io::copy(&mut down_src, &mut down_dst);
        let _ = down_dst.shutdown(Shutdown::Write);
    });

    let mut channel =
        NetemChannel::new(profile, id).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let mut line = DelayLine::new(server.try_clone()?);
    let mut inbox = PacketReader::new();
    let mut src = client.try_clone()?;
    let mut buf = vec![0u8; 16 * 1024];
    let result = 'uplink: loop {
        let n = match src.read(&mut buf) {
            Ok(0) => break Ok(()),
            Ok(n) => n,
            Err(e) => break Err(e),
        };
        let now = unix_ms();
        inbox.extend(&buf[..n]);
        loop {
            let packet = match inbox.next_packet() {
                Ok(Some(p)) => p,
                Ok(None) => break,
                Err(e) => break 'uplink Err(io::Error::new(io::ErrorKind::InvalidData, e.to_string())),
            };
            let (packet, at) = match packet {
                Packet::Publish { topic, payload } if payload.len() == PAYLOAD_LEN => {
                    match channel.transmit(&payload, now) {
                        Ok(Transmission::Delivered(ev)) => (
                            Packet::Publish {
                                topic,
                                payload: ev.payload,
                            },
                            ev.deliver_at_ms,
                        ),
                        Ok(Transmission::Dropped) => continue,
                        Err(e) => break 'uplink Err(io::Error::other(e.to_string())),
                    }
                }
                other => {
                    let at = channel.pass_through(now);
                    (other, at)
                }
            };
            let bytes = encode_packet(&packet).expect("re-encoding a decoded packet");
            if let Err(e) = line.write_chunk(&bytes, at) {
                break 'uplink Err(e);
            }
        }
    };
    // drain delayed bytes, then close the upstream write half
    drop(line);
    let _ = server.shutdown(Shutdown::Write);
    let _ = downlink.join();
    let _ = client.shutdown(Shutdown::Both);
    result
}
