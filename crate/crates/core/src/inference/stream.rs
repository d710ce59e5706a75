use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::par::{self, Parallelism};

use super::{ClassProbs, Model};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub index: usize,
    /// Position of the first sample in the received stream.
    pub start_sample: usize,
    pub samples: Vec<i32>,
}

/// Incremental windowing of a received sample stream. A trailing partial
/// window is held until enough samples arrive.
#[derive(Debug, Clone)]
pub struct Segmenter {
    seg_len: usize,
    hop: usize,
    buf: Vec<i32>,
    /// Stream position of `buf[0]`.
    offset: usize,
    skip: usize,
    next_index: usize,
}

impl Segmenter {
    pub fn new(seg_len: usize, hop: usize) -> Self {
        assert!(seg_len > 0 && hop > 0, "segment length and hop must be positive");
        Self {
            seg_len,
            hop,
            buf: Vec::new(),
            offset: 0,
            skip: 0,
            next_index: 0,
        }
    }

    pub fn push(&mut self, samples: &[i32]) -> Vec<Segment> {
        let mut input = samples;
        if self.skip > 0 {
            let n = self.skip.min(input.len());
            input = &input[n..];
            self.skip -= n;
            self.offset += n;
        }
        self.buf.extend_from_slice(input);
        let mut out = Vec::new();
        while self.buf.len() >= self.seg_len {
            out.push(Segment {
                index: self.next_index,
                start_sample: self.offset,
                samples: self.buf[..self.seg_len].to_vec(),
            });
            self.next_index += 1;
            if self.hop <= self.buf.len() {
                self.buf.drain(..self.hop);
                self.offset += self.hop;
            } else {
                // hop longer than what is buffered: discard future samples too
                self.skip = self.hop - self.buf.len();
                self.offset += self.buf.len();
                self.buf.clear();
            }
        }
        out
    }

    /// Samples received but not yet part of an emitted segment.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

/// Non-overlapping (for `hop == seg_len`) windows over `samples`; returns
/// the complete segments and the number of samples left pending.
pub fn segment_stream(samples: &[i32], seg_len: usize, hop: usize) -> (Vec<Segment>, usize) {
    let mut s = Segmenter::new(seg_len, hop);
    let segs = s.push(samples);
    (segs, s.pending())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceLogEntry {
    #[serde(default)]
    pub session: String,
    pub segment_index: usize,
    pub start_sample: usize,
    pub probs: ClassProbs,
    /// Wall-clock time spent in the forward pass.
    pub duration_ms: f64,
}

/// Classify every segment, using up to `workers` concurrent forward passes.
/// Entries come back in segment order whatever the completion order.
pub fn classify_stream(model: &Model, session: &str, segments: &[Segment], workers: usize) -> Vec<InferenceLogEntry> {
    par::map_ordered(segments, Parallelism::from_workers(workers), |_, seg| {
        let t0 = Instant::now();
        let probs = model
            .forward(&seg.samples)
            .expect("segments are cut to the model input length");
        let duration_ms = t0.elapsed().as_secs_f64() * 1000.0;
        InferenceLogEntry {
            session: session.to_string(),
            segment_index: seg.index,
            start_sample: seg.start_sample,
            probs,
            duration_ms,
        }
    })
}
