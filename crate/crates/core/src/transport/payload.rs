//! 76-byte batch payload carried in each Publish:
//! `u64 send_ts_ms | u32 seq_no | 16 x i32 amplitude`, all little-endian.

use crate::ecg::{SampleBatch, BATCH_LEN};

pub const PAYLOAD_LEN: usize = 8 + 4 + 4 * BATCH_LEN;
pub const SAMPLES_OFFSET: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPayload {
    pub send_ts_ms: u64,
    pub seq_no: u32,
    pub samples: [i32; BATCH_LEN],
}

impl BatchPayload {
    /// The wire carries whole milliseconds; the fractional part of the
    /// virtual release instant is truncated.
    pub fn from_batch(batch: &SampleBatch) -> Self {
        Self {
            send_ts_ms: batch.send_ts_ms.max(0.0) as u64,
            seq_no: batch.seq_no,
            samples: batch.samples,
        }
    }

    pub fn encode(&self) -> [u8; PAYLOAD_LEN] {
        let mut out = [0u8; PAYLOAD_LEN];
        out[..8].copy_from_slice(&self.send_ts_ms.to_le_bytes());
        out[8..12].copy_from_slice(&self.seq_no.to_le_bytes());
        for (i, s) in self.samples.iter().enumerate() {
            let at = SAMPLES_OFFSET + 4 * i;
            out[at..at + 4].copy_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != PAYLOAD_LEN {
            return None;
        }
        let send_ts_ms = u64::from_le_bytes(bytes[..8].try_into().ok()?);
        let seq_no = u32::from_le_bytes(bytes[8..12].try_into().ok()?);
        let mut samples = [0i32; BATCH_LEN];
        for (i, s) in samples.iter_mut().enumerate() {
            let at = SAMPLES_OFFSET + 4 * i;
            *s = i32::from_le_bytes(bytes[at..at + 4].try_into().ok()?);
        }
        Some(Self {
            send_ts_ms,
            seq_no,
            samples,
        })
    }
}

/// Seq number of a payload without decoding the samples.
pub fn peek_seq_no(bytes: &[u8]) -> Option<u32> {
    (bytes.len() == PAYLOAD_LEN).then(|| u32::from_le_bytes(bytes[8..12].try_into().unwrap()))
}

/// CRC-32 of the raw payload as eight hex digits.
pub fn digest(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}
