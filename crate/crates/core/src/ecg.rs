//! Single-lead ECG source: synthetic PQRST generator, CSV replay and the
//! 16-sample batching used on the wire.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Sampling rate of the shirt's ECG lead.
pub const SAMPLE_RATE_HZ: u32 = 256;
/// Samples carried by one published message.
pub const BATCH_LEN: usize = 16;
/// Nominal spacing between consecutive samples.
pub const SAMPLE_PERIOD_MS: f64 = 1000.0 / SAMPLE_RATE_HZ as f64;
/// Nominal spacing between consecutive batches at real-time pace (62.5 ms).
pub const BATCH_PERIOD_MS: f64 = BATCH_LEN as f64 * SAMPLE_PERIOD_MS;

pub const MIN_HEART_RATE_BPM: f64 = 20.0;
pub const MAX_HEART_RATE_BPM: f64 = 240.0;

#[derive(Debug, Error)]
pub enum EcgError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A 256 Hz single-lead recording in signed integer microvolts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSeries {
    values: Vec<i32>,
    start_time_ms: i64,
}

impl SampleSeries {
    pub fn new(values: Vec<i32>, start_time_ms: i64) -> Result<Self, EcgError> {
        if values.is_empty() {
            return Err(EcgError::InvalidArgument(
                "a sample series needs at least one sample".into(),
            ));
        }
        Ok(Self { values, start_time_ms })
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE_HZ
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn start_time_ms(&self) -> i64 {
        self.start_time_ms
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / SAMPLE_RATE_HZ as f64
    }

    pub fn into_values(self) -> Vec<i32> {
        self.values
    }
}

/// One transmission unit: exactly [`BATCH_LEN`] samples plus its release
/// instant on the sender's virtual clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub seq_no: u32,
    pub samples: [i32; BATCH_LEN],
    pub send_ts_ms: f64,
}

/// A Gaussian bump of the per-beat template. Center and width are fractions
/// of the beat period; amplitude is in microvolts.
#[derive(Debug, Clone, Copy)]
struct Wave {
    amplitude_uv: f64,
    center: f64,
    width: f64,
}

// P, Q, R, S, T. The R peak sits at 40% of the beat; widths scale with the
// period, so the waveform compresses at higher heart rates.
const PQRST: [Wave; 5] = [
    Wave {
        amplitude_uv: 150.0,
        center: 0.20,
        width: 0.025,
    },
    Wave {
        amplitude_uv: -120.0,
        center: 0.37,
        width: 0.010,
    },
    Wave {
        amplitude_uv: 1200.0,
        center: 0.40,
        width: 0.012,
    },
    Wave {
        amplitude_uv: -250.0,
        center: 0.43,
        width: 0.010,
    },
    Wave {
        amplitude_uv: 300.0,
        center: 0.68,
        width: 0.040,
    },
];

/// Beat period in whole samples for a heart rate.
pub fn beat_period_samples(heart_rate_bpm: f64) -> usize {
    (SAMPLE_RATE_HZ as f64 * 60.0 / heart_rate_bpm).round() as usize
}

fn template_value(phase: f64) -> f64 {
    PQRST
        .iter()
        .map(|w| {
            // distance on the unit circle so beat boundaries stay continuous
            let mut d = (phase - w.center).abs();
            if d > 0.5 {
                d = 1.0 - d;
            }
            w.amplitude_uv * (-(d * d) / (2.0 * w.width * w.width)).exp()
        })
        .sum()
}

/// Synthesize a sum-of-Gaussians ECG with additive white noise.
///
/// The noiseless waveform is exactly periodic with
/// [`beat_period_samples`]`(heart_rate_bpm)` samples. The series starts at
/// virtual time 0.
pub fn generate_synthetic_ecg(
    duration_s: f64,
    heart_rate_bpm: f64,
    noise_std_uv: f64,
    seed: u64,
) -> Result<SampleSeries, EcgError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(EcgError::InvalidArgument(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if !(MIN_HEART_RATE_BPM..=MAX_HEART_RATE_BPM).contains(&heart_rate_bpm) {
        return Err(EcgError::InvalidArgument(format!(
            "heart rate {heart_rate_bpm} bpm outside {MIN_HEART_RATE_BPM}..={MAX_HEART_RATE_BPM}"
        )));
    }
    if !(noise_std_uv.is_finite() && noise_std_uv >= 0.0) {
        return Err(EcgError::InvalidArgument(format!(
            "noise std must be non-negative, got {noise_std_uv}"
        )));
    }
    let n = (duration_s * SAMPLE_RATE_HZ as f64).round() as usize;
    if n == 0 {
        return Err(EcgError::InvalidArgument(format!(
            "{duration_s} s at {SAMPLE_RATE_HZ} Hz yields no samples"
        )));
    }

    let period = beat_period_samples(heart_rate_bpm);
    let beat: Vec<f64> = (0..period).map(|i| template_value(i as f64 / period as f64)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std_uv).expect("validated std");
    let values = (0..n)
        .map(|i| {
            let clean = beat[i % period];
            let v = if noise_std_uv > 0.0 {
                clean + noise.sample(&mut rng)
            } else {
                clean
            };
            v.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32
        })
        .collect();
    SampleSeries::new(values, 0)
}

/// Cut a series into 16-sample batches released every `62.5 / pace` ms of
/// virtual time, starting at the series' start time. A trailing partial
/// batch is dropped.
pub fn batchify(series: &SampleSeries, pace: f64) -> Batches<'_> {
    assert!(pace >= 1.0 && pace.is_finite(), "pace must be a finite factor >= 1");
    Batches {
        chunks: series.values.chunks_exact(BATCH_LEN),
        start_ms: series.start_time_ms as f64,
        gap_ms: BATCH_PERIOD_MS / pace,
        next: 0,
    }
}

/// Iterator returned by [`batchify`].
#[derive(Debug, Clone)]
pub struct Batches<'a> {
    chunks: std::slice::ChunksExact<'a, i32>,
    start_ms: f64,
    gap_ms: f64,
    next: u32,
}

impl Iterator for Batches<'_> {
    type Item = SampleBatch;

    fn next(&mut self) -> Option<SampleBatch> {
        let chunk = self.chunks.next()?;
        let seq_no = self.next;
        self.next += 1;
        let mut samples = [0i32; BATCH_LEN];
        samples.copy_from_slice(chunk);
        Some(SampleBatch {
            seq_no,
            samples,
            send_ts_ms: self.start_ms + seq_no as f64 * self.gap_ms,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.chunks.size_hint()
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// Render a series in the `rate=256,start=<ms>` CSV format.
pub fn to_csv(series: &SampleSeries) -> String {
    let mut out = String::with_capacity(series.len() * 6 + 24);
    let _ = writeln!(out, "rate={SAMPLE_RATE_HZ},start={}", series.start_time_ms);
    for v in &series.values {
        let _ = writeln!(out, "{v}");
    }
    out
}

/// Parse the CSV format; `origin` is used in error messages.
pub fn parse_csv(text: &str, origin: &str) -> Result<SampleSeries, EcgError> {
    let err = |line: usize, message: String| EcgError::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty file, expected header `rate=256,start=<ms>`".into()))?;
    let start_time_ms = parse_header(header.trim()).map_err(|m| err(1, m))?;

    let mut values = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = line
            .parse::<i32>()
            .map_err(|e| err(idx + 1, format!("`{line}` is not a 32-bit integer: {e}")))?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(err(1, "no samples after header".into()));
    }
    SampleSeries::new(values, start_time_ms)
}

fn parse_header(header: &str) -> Result<i64, String> {
    let mut rate = None;
    let mut start = None;
    for field in header.split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("malformed header field `{field}`"))?;
        match key.trim() {
            "rate" => rate = Some(value.trim().parse::<u32>().map_err(|e| format!("rate: {e}"))?),
            "start" => start = Some(value.trim().parse::<i64>().map_err(|e| format!("start: {e}"))?),
            other => return Err(format!("unknown header field `{other}`")),
        }
    }
    match rate {
        Some(SAMPLE_RATE_HZ) => {}
        Some(r) => return Err(format!("unsupported sample rate {r}, expected {SAMPLE_RATE_HZ}")),
        None => return Err("header lacks `rate=`".into()),
    }
    start.ok_or_else(|| "header lacks `start=`".into())
}

pub fn load_series(path: impl AsRef<Path>) -> Result<SampleSeries, EcgError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EcgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, &path.display().to_string())
}

pub fn save_series(series: &SampleSeries, path: impl AsRef<Path>) -> Result<(), EcgError> {
    let path = path.as_ref();
    fs::write(path, to_csv(series)).map_err(|source| EcgError::Io {
        path: path.display().to_string(),
        source,
    })
}
