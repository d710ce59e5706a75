//! Encoder/decoder for the MQTT 3.1.1 packet subset used on the uplink:
//! QoS 0 only, clean sessions, no wills, no credentials, no wildcards.

use thiserror::Error;

/// Largest value representable by the four-byte remaining-length field.
pub const MAX_REMAINING_LENGTH: usize = 268_435_455;

const PROTOCOL_NAME: &[u8] = b"MQTT";
const PROTOCOL_LEVEL: u8 = 4;
const CLEAN_SESSION: u8 = 0x02;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed remaining length")]
    MalformedLength,
    #[error("protocol error: {0}")]
    Protocol(String),
}

fn protocol<T>(msg: impl Into<String>) -> Result<T, CodecError> {
    Err(CodecError::Protocol(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect { client_id: String, keep_alive_s: u16 },
    ConnAck { return_code: u8 },
    Publish { topic: String, payload: Vec<u8> },
    Subscribe { packet_id: u16, topic: String },
    SubAck { packet_id: u16, granted_qos: u8 },
    PingReq,
    PingResp,
    Disconnect,
}

impl Packet {
    fn type_nibble(&self) -> u8 {
        match self {
            Packet::Connect { .. } => 1,
            Packet::ConnAck { .. } => 2,
            Packet::Publish { .. } => 3,
            Packet::Subscribe { .. } => 8,
            Packet::SubAck { .. } => 9,
            Packet::PingReq => 12,
            Packet::PingResp => 13,
            Packet::Disconnect => 14,
        }
    }

    fn flags(&self) -> u8 {
        match self {
            Packet::Subscribe { .. } => 0x02,
            _ => 0x00,
        }
    }
}

/// Base-128 varint with continuation bit, at most four bytes.
pub fn encode_remaining_length(n: usize) -> Result<Vec<u8>, CodecError> {
    if n > MAX_REMAINING_LENGTH {
        return Err(CodecError::InvalidArgument(format!(
            "remaining length {n} exceeds {MAX_REMAINING_LENGTH}"
        )));
    }
    let mut out = Vec::with_capacity(4);
    let mut x = n;
    loop {
        let mut byte = (x % 128) as u8;
        x /= 128;
        if x > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if x == 0 {
            return Ok(out);
        }
    }
}

/// Returns `Ok(None)` when every byte seen so far carries the continuation
/// bit and fewer than four bytes are available.
pub fn decode_remaining_length(bytes: &[u8]) -> Result<Option<(usize, usize)>, CodecError> {
    let mut value = 0usize;
    let mut multiplier = 1usize;
    for (i, &b) in bytes.iter().take(4).enumerate() {
        value += (b & 0x7F) as usize * multiplier;
        if b & 0x80 == 0 {
            // A zero terminator after continuation bytes is a padded encoding.
            if i > 0 && b == 0 {
                return Err(CodecError::MalformedLength);
            }
            return Ok(Some((value, i + 1)));
        }
        multiplier *= 128;
    }
    if bytes.len() >= 4 {
        Err(CodecError::MalformedLength)
    } else {
        Ok(None)
    }
}

fn check_topic(topic: &str) -> Result<(), CodecError> {
    if topic.is_empty() {
        return Err(CodecError::InvalidArgument("empty topic".into()));
    }
    if topic.contains(['+', '#', '\0']) {
        return Err(CodecError::InvalidArgument(format!(
            "topic `{topic}` contains a wildcard or NUL"
        )));
    }
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), CodecError> {
    let len = u16::try_from(s.len())
        .map_err(|_| CodecError::InvalidArgument(format!("string of {} bytes too long", s.len())))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_packet(packet: &Packet) -> Result<Vec<u8>, CodecError> {
    let mut body = Vec::new();
    match packet {
        Packet::Connect {
            client_id,
            keep_alive_s,
        } => {
            put_str(&mut body, "MQTT")?;
            body.push(PROTOCOL_LEVEL);
            body.push(CLEAN_SESSION);
            body.extend_from_slice(&keep_alive_s.to_be_bytes());
            put_str(&mut body, client_id)?;
        }
        Packet::ConnAck { return_code } => {
            if *return_code > 5 {
                return Err(CodecError::InvalidArgument(format!(
                    "connack return code {return_code} > 5"
                )));
            }
            body.extend_from_slice(&[0x00, *return_code]);
        }
        Packet::Publish { topic, payload } => {
            check_topic(topic)?;
            put_str(&mut body, topic)?;
            body.extend_from_slice(payload);
        }
        Packet::Subscribe { packet_id, topic } => {
            if *packet_id == 0 {
                return Err(CodecError::InvalidArgument("packet id 0".into()));
            }
            check_topic(topic)?;
            body.extend_from_slice(&packet_id.to_be_bytes());
            put_str(&mut body, topic)?;
            body.push(0);
        }
        Packet::SubAck { packet_id, granted_qos } => {
            if *packet_id == 0 || *granted_qos != 0 {
                return Err(CodecError::InvalidArgument(
                    "suback needs a non-zero packet id and granted QoS 0".into(),
                ));
            }
            body.extend_from_slice(&packet_id.to_be_bytes());
            body.push(0);
        }
        Packet::PingReq | Packet::PingResp | Packet::Disconnect => {}
    }
    let len = encode_remaining_length(body.len())?;
    let mut out = Vec::with_capacity(1 + len.len() + body.len());
    out.push(packet.type_nibble() << 4 | packet.flags());
    out.extend_from_slice(&len);
    out.extend_from_slice(&body);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return protocol("packet body shorter than its fields");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        match std::str::from_utf8(raw) {
            Ok(s) if !s.contains('\0') => Ok(s.to_string()),
            Ok(_) => protocol("string contains U+0000"),
            Err(e) => protocol(format!("invalid UTF-8: {e}")),
        }
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<(), CodecError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            protocol(format!("{} trailing bytes in packet", self.buf.len() - self.pos))
        }
    }
}

/// Parse one packet from the head of `buffer`.
///
/// `Ok(None)` means the buffer holds only a prefix of a packet; on success
/// the second element is the number of bytes the packet occupied. Any
/// `Err` is fatal for the connection.
pub fn decode_packet(buffer: &[u8]) -> Result<Option<(Packet, usize)>, CodecError> {
    let Some(&first) = buffer.first() else {
        return Ok(None);
    };
    let kind = first >> 4;
    let flags = first & 0x0F;
    match kind {
        0 | 15 => return protocol(format!("reserved packet type {kind}")),
        1 | 2 | 3 | 8 | 9 | 12 | 13 | 14 => {}
        _ => return protocol(format!("unsupported packet type {kind}")),
    }
    let expected_flags = if kind == 8 { 0x02 } else { 0x00 };
    if flags != expected_flags {
        return protocol(format!(
            "flags {flags:#06b} not allowed for packet type {kind} (QoS 0 subset)"
        ));
    }
    let Some((remaining, len_bytes)) = decode_remaining_length(&buffer[1..])? else {
        return Ok(None);
    };
    let total = 1 + len_bytes + remaining;
    if buffer.len() < total {
        return Ok(None);
    }
    let mut c = Cursor {
        buf: &buffer[1 + len_bytes..total],
        pos: 0,
    };
    let packet = match kind {
        1 => {
            if c.take(2)? != [0x00, 0x04] || c.take(4)? != PROTOCOL_NAME {
                return protocol("protocol name is not MQTT");
            }
            let level = c.u8()?;
            if level != PROTOCOL_LEVEL {
                return protocol(format!("protocol level {level} unsupported"));
            }
            let connect_flags = c.u8()?;
            if connect_flags & 0x01 != 0 {
                return protocol("reserved connect flag set");
            }
            if connect_flags & !CLEAN_SESSION != 0 {
                return protocol("wills and credentials are not supported");
            }
            let keep_alive_s = c.u16()?;
            let client_id = c.string()?;
            Packet::Connect {
                client_id,
                keep_alive_s,
            }
        }
        2 => {
            if c.u8()? != 0 {
                return protocol("session-present flag not supported");
            }
            let return_code = c.u8()?;
            if return_code > 5 {
                return protocol(format!("connack return code {return_code}"));
            }
            Packet::ConnAck { return_code }
        }
        3 => {
            let topic = c.string()?;
            if check_topic(&topic).is_err() {
                return protocol(format!("invalid publish topic `{topic}`"));
            }
            Packet::Publish {
                topic,
                payload: c.rest().to_vec(),
            }
        }
        8 => {
            let packet_id = c.u16()?;
            if packet_id == 0 {
                return protocol("subscribe with packet id 0");
            }
            let topic = c.string()?;
            if check_topic(&topic).is_err() {
                return protocol(format!("unsupported topic filter `{topic}`"));
            }
            if c.u8()? != 0 {
                return protocol("only QoS 0 subscriptions are supported");
            }
            Packet::Subscribe { packet_id, topic }
        }
        9 => {
            let packet_id = c.u16()?;
            let granted_qos = c.u8()?;
            if granted_qos != 0 {
                return protocol(format!("granted QoS {granted_qos}"));
            }
            Packet::SubAck { packet_id, granted_qos }
        }
        12 => Packet::PingReq,
        13 => Packet::PingResp,
        14 => Packet::Disconnect,
        _ => unreachable!("filtered above"),
    };
    c.finish()?;
    Ok(Some((packet, total)))
}

/// Accumulates stream bytes and yields whole packets in order.
#[derive(Debug, Default)]
pub struct PacketReader {
    buf: Vec<u8>,
}

impl PacketReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_packet(&mut self) -> Result<Option<Packet>, CodecError> {
        match decode_packet(&self.buf)? {
            Some((p, used)) => {
                self.buf.drain(..used);
                Ok(Some(p))
            }
            None => Ok(None),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}
