//! Cellular link emulation: per-batch latency from a Gaussian mixture,
//! sample-level corruption, batch loss, and in-order delivery.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecg::BATCH_LEN;
use crate::par::{self, Parallelism};
use crate::transport::payload::{peek_seq_no, PAYLOAD_LEN, SAMPLES_OFFSET};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid channel profile: {0}")]
    InvalidProfile(String),
    #[error("channel disconnected after {0} batches")]
    Disconnected(u64),
    #[error("{path}: {message}")]
    Load { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyComponent {
    pub weight: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Parametric description of one emulated cellular generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub name: String,
    pub latency_components: Vec<LatencyComponent>,
    pub per_sample_corruption_prob: f64,
    pub per_batch_loss_prob: f64,
    #[serde(default)]
    pub clock_skew_ms: f64,
    /// Probability that a batch keeps the previous batch's mixture
    /// component instead of redrawing one by weight. 0 gives i.i.d. draws;
    /// the stationary component law equals the weights for any value < 1.
    #[serde(default)]
    pub regime_persistence: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generation {
    #[serde(rename = "3g")]
    G3,
    #[serde(rename = "4g")]
    G4,
    #[serde(rename = "5g")]
    G5,
}

impl std::str::FromStr for Generation {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "3g" => Ok(Generation::G3),
            "4g" => Ok(Generation::G4),
            "5g" => Ok(Generation::G5),
            other => Err(ChannelError::InvalidArgument(format!(
                "unknown generation `{other}` (expected 3g, 4g or 5g)"
            ))),
        }
    }
}

fn component(weight: f64, mean_ms: f64, std_ms: f64) -> LatencyComponent {
    LatencyComponent {
        weight,
        mean_ms,
        std_ms,
    }
}

/// Presets reproducing the measured 3G/4G/5G delay distributions and
/// corruption rates. Loss is 0; the measured "missing or unequal" rate is
/// assigned entirely to corruption.
pub fn preset(generation: Generation) -> ChannelProfile {
    let (name, components, corruption, persistence) = match generation {
        Generation::G3 => (
            "3g",
            vec![component(0.65, 137.0, 8.0), component(0.35, 210.0, 8.0)],
            0.0298,
            0.95,
        ),
        Generation::G4 => ("4g", vec![component(1.0, 134.0, 12.0)], 0.0085, 0.0),
        Generation::G5 => ("5g", vec![component(1.0, 114.0, 6.0)], 0.0007, 0.0),
    };
    ChannelProfile {
        name: name.to_string(),
        latency_components: components,
        per_sample_corruption_prob: corruption,
        per_batch_loss_prob: 0.0,
        clock_skew_ms: 0.0,
        regime_persistence: persistence,
        seed: 0,
    }
}

/// No delay, corruption or loss.
pub fn passthrough() -> ChannelProfile {
    ChannelProfile {
        name: "none".to_string(),
        latency_components: vec![component(1.0, 0.0, 0.0)],
        per_sample_corruption_prob: 0.0,
        per_batch_loss_prob: 0.0,
        clock_skew_ms: 0.0,
        regime_persistence: 0.0,
        seed: 0,
    }
}

pub fn preset_by_name(name: &str) -> Result<ChannelProfile, ChannelError> {
    Ok(preset(name.parse()?))
}

/// `3g`, `4g`, `5g`, `none`, or a path to a JSON profile file.
pub fn resolve_profile(spec: &str) -> Result<ChannelProfile, ChannelError> {
    if spec.eq_ignore_ascii_case("none") {
        return Ok(passthrough());
    }
    match spec.parse::<Generation>() {
        Ok(g) => Ok(preset(g)),
        Err(_) => load_profile(spec),
    }
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ChannelProfile, ChannelError> {
    let path = path.as_ref();
    let load_err = |message: String| ChannelError::Load {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
    let profile: ChannelProfile = serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?;
    profile.validate()?;
    Ok(profile)
}

impl ChannelProfile {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: String| Err(ChannelError::InvalidProfile(m));
        if self.latency_components.is_empty() {
            return bad("at least one latency component is required".into());
        }
        for (i, c) in self.latency_components.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.weight) {
                return bad(format!("component {i}: weight {} outside [0,1]", c.weight));
            }
            if !(c.mean_ms.is_finite() && c.mean_ms >= 0.0) {
                return bad(format!("component {i}: mean {} must be non-negative", c.mean_ms));
            }
            if !(c.std_ms.is_finite() && c.std_ms >= 0.0) {
                return bad(format!("component {i}: std {} must be non-negative", c.std_ms));
            }
        }
        let total: f64 = self.latency_components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}, expected 1"));
        }
        for (label, p) in [
            ("per_sample_corruption_prob", self.per_sample_corruption_prob),
            ("per_batch_loss_prob", self.per_batch_loss_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{label} = {p} outside [0,1]"));
            }
        }
        if !(0.0..1.0).contains(&self.regime_persistence) {
            return bad(format!(
                "regime_persistence = {} outside [0,1)",
                self.regime_persistence
            ));
        }
        if !self.clock_skew_ms.is_finite() {
            return bad("clock_skew_ms must be finite".into());
        }
        Ok(())
    }

    /// Mixture mean, ignoring the truncation at zero.
    pub fn latency_mean_ms(&self) -> f64 {
        self.latency_components.iter().map(|c| c.weight * c.mean_ms).sum()
    }

    /// Mixture standard deviation, ignoring the truncation at zero.
    pub fn latency_std_ms(&self) -> f64 {
        let mean = self.latency_mean_ms();
        let second: f64 = self
            .latency_components
            .iter()
            .map(|c| c.weight * (c.std_ms * c.std_ms + c.mean_ms * c.mean_ms))
            .sum();
        (second - mean * mean).max(0.0).sqrt()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// RNG stream for a connection, derived from the profile seed.
pub fn connection_rng(seed: u64, connection_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(connection_id);
    rng
}

/// Latency draw state: the mixture, its current regime and an RNG.
#[derive(Debug, Clone)]
pub struct LatencySampler {
    components: Vec<(f64, Normal<f64>)>,
    cumulative: Vec<f64>,
    persistence: f64,
    regime: Option<usize>,
}

impl LatencySampler {
    pub fn new(profile: &ChannelProfile) -> Self {
        let mut acc = 0.0;
        let cumulative = profile
            .latency_components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();
        let components = profile
            .latency_components
            .iter()
            .map(|c| (c.mean_ms, Normal::new(c.mean_ms, c.std_ms).expect("validated std")))
            .collect();
        Self {
            components,
            cumulative,
            persistence: profile.regime_persistence,
            regime: None,
        }
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }

    /// Draw one latency; returns the component index and the delay in ms,
    /// truncated below at 0.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (usize, f64) {
        let keep = match self.regime {
            Some(_) if self.persistence > 0.0 => rng.gen::<f64>() < self.persistence,
            _ => false,
        };
        let idx = match (keep, self.regime) {
            (true, Some(r)) => r,
            _ => self.pick_component(rng),
        };
        self.regime = Some(idx);
        let latency = self.components[idx].1.sample(rng).max(0.0);
        (idx, latency)
    }
}

/// One latency draw from `sampler`: pick a component by weight (or keep the
/// current regime), then Gaussian(mean, std) truncated at 0.
pub fn sample_latency<R: Rng + ?Sized>(sampler: &mut LatencySampler, rng: &mut R) -> f64 {
    sampler.sample(rng).1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureEstimate {
    pub draws: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub occupancy: Vec<f64>,
}

const MC_CHUNK: usize = 1 << 16;

/// Monte-Carlo moments and component occupancy of a profile's latency law.
/// Draws are split into fixed chunks with independent RNG streams, so the
/// result does not depend on the worker count.
pub fn monte_carlo_latency(profile: &ChannelProfile, draws: usize, parallelism: Parallelism) -> MixtureEstimate {
    let k = profile.latency_components.len();
    let chunks: Vec<usize> = (0..draws.div_ceil(MC_CHUNK))
        .map(|c| MC_CHUNK.min(draws - c * MC_CHUNK))
        .collect();
    let partial = par::map_ordered(&chunks, parallelism, |c, &n| {
        let mut rng = connection_rng(profile.seed, 1 << 32 | c as u64);
        let mut sampler = LatencySampler::new(profile);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            let (idx, x) = sampler.sample(&mut rng);
            sum += x;
            sum_sq += x * x;
            counts[idx] += 1;
        }
        (sum, sum_sq, counts)
    });
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut counts = vec![0usize; k];
    for (s, q, c) in partial {
        sum += s;
        sum_sq += q;
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
    }
    let n = draws.max(1) as f64;
    let mean = sum / n;
    MixtureEstimate {
        draws,
        mean_ms: mean,
        std_ms: (sum_sq / n - mean * mean).max(0.0).sqrt(),
        occupancy: counts.iter().map(|&c| c as f64 / n).collect(),
    }
}

/// Exact impairments applied on top of the probabilistic ones: batches
/// dropped by seq number and individual samples corrupted by
/// (seq number, sample index).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub drop_batches: BTreeSet<u32>,
    pub corrupt_samples: BTreeSet<(u32, usize)>,
}

impl FaultPlan {
    pub fn is_empty(&self) -> bool {
        self.drop_batches.is_empty() && self.corrupt_samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryEvent {
    pub deliver_at_ms: f64,
    pub payload: Vec<u8>,
    pub latency_ms: f64,
    pub component: usize,
    /// Indices (0..16) of amplitude fields that were altered.
    pub corrupted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transmission {
    Delivered(DeliveryEvent),
    Dropped,
}

/// Injector ground truth accumulated by a channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub batches: u64,
    pub dropped_batches: u64,
    pub corrupted_samples: u64,
}

/// One emulated connection. Delivery times are non-decreasing, like a byte
/// stream over TCP.
#[derive(Debug, Clone)]
pub struct NetemChannel {
    profile: ChannelProfile,
    rng: ChaCha8Rng,
    sampler: LatencySampler,
    last_deliver_at: f64,
    faults: FaultPlan,
    disconnect_after: Option<u64>,
    stats: ChannelStats,
}

impl NetemChannel {
    pub fn new(profile: ChannelProfile, connection_id: u64) -> Result<Self, ChannelError> {
        profile.validate()?;
        Ok(Self {
            rng: connection_rng(profile.seed, connection_id),
            sampler: LatencySampler::new(&profile),
            profile,
            last_deliver_at: f64::NEG_INFINITY,
            faults: FaultPlan::default(),
            disconnect_after: None,
            stats: ChannelStats::default(),
        })
    }

    pub fn with_faults(mut self, faults: FaultPlan) -> Self {
        self.faults = faults;
        self
    }

    /// Make the link fail once `batches` payloads have been carried.
    pub fn with_disconnect_after(mut self, batches: u64) -> Self {
        self.disconnect_after = Some(batches);
        self
    }

    pub fn profile(&self) -> &ChannelProfile {
        &self.profile
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    /// Earliest instant a packet entering at `arrival_ms` may be delivered
    /// without overtaking earlier traffic. Used for control packets, which
    /// are not delayed by the mixture.
    pub fn pass_through(&mut self, arrival_ms: f64) -> f64 {
        let at = self.last_deliver_at.max(arrival_ms + self.profile.clock_skew_ms);
        self.last_deliver_at = at;
        at
    }

    pub fn transmit(&mut self, payload: &[u8], arrival_ms: f64) -> Result<Transmission, ChannelError> {
        if payload.len() != PAYLOAD_LEN {
            return Err(ChannelError::InvalidArgument(format!(
                "payload is {} bytes, expected {PAYLOAD_LEN}",
                payload.len()
            )));
        }
        if self.disconnect_after.is_some_and(|n| self.stats.batches >= n) {
            return Err(ChannelError::Disconnected(self.stats.batches));
        }
        self.stats.batches += 1;
        let seq = peek_seq_no(payload).expect("length checked");

        let lost = self.profile.per_batch_loss_prob > 0.0 && self.rng.gen::<f64>() < self.profile.per_batch_loss_prob;
        if lost || self.faults.drop_batches.contains(&seq) {
            self.stats.dropped_batches += 1;
            return Ok(Transmission::Dropped);
        }

        let (component, latency_ms) = self.sampler.sample(&mut self.rng);
        let mut out = payload.to_vec();
        let mut corrupted = Vec::new();
        for i in 0..BATCH_LEN {
            let random = self.profile.per_sample_corruption_prob > 0.0
                && self.rng.gen::<f64>() < self.profile.per_sample_corruption_prob;
            if random || self.faults.corrupt_samples.contains(&(seq, i)) {
                let mask = loop {
                    let m: u32 = self.rng.gen();
                    if m != 0 {
                        break m;
                    }
                };
                let at = SAMPLES_OFFSET + 4 * i;
                for (b, m) in out[at..at + 4].iter_mut().zip(mask.to_le_bytes()) {
                    *b ^= m;
                }
                corrupted.push(i);
            }
        }
        self.stats.corrupted_samples += corrupted.len() as u64;

        let deliver_at_ms = self
            .last_deliver_at
            .max(arrival_ms + latency_ms + self.profile.clock_skew_ms);
        self.last_deliver_at = deliver_at_ms;
        Ok(Transmission::Delivered(DeliveryEvent {
            deliver_at_ms,
            payload: out,
            latency_ms,
            component,
            corrupted,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecg::SampleBatch;
    use crate::transport::payload::BatchPayload;

    fn payload(seq: u32) -> Vec<u8> {
        let samples: [i32; 16] = std::array::from_fn(|i| i as i32 * 100 - 700);
        BatchPayload::from_batch(&SampleBatch {
            seq_no: seq,
            samples,
            send_ts_ms: seq as f64 * 62.5,
        })
        .encode()
        .to_vec()
    }

    fn constant(mean: f64) -> ChannelProfile {
        ChannelProfile {
            name: "const".into(),
            latency_components: vec![component(1.0, mean, 0.0)],
            per_sample_corruption_prob: 0.0,
            per_batch_loss_prob: 0.0,
            clock_skew_ms: 0.0,
            regime_persistence: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn presets_carry_measured_values() {
        let p5 = preset(Generation::G5);
        assert_eq!(p5.latency_mean_ms(), 114.0);
        assert_eq!(p5.per_sample_corruption_prob, 0.0007);
        let p4 = preset(Generation::G4);
        assert_eq!(p4.latency_mean_ms(), 134.0);
        assert_eq!(p4.per_sample_corruption_prob, 0.0085);
        let p3 = preset(Generation::G3);
        let means: Vec<f64> = p3.latency_components.iter().map(|c| c.mean_ms).collect();
        assert_eq!(means, vec![137.0, 210.0]);
        assert_eq!(p3.per_sample_corruption_prob, 0.0298);
        for p in [p3, p4, p5] {
            p.validate().unwrap();
            assert_eq!(p.per_batch_loss_prob, 0.0);
        }
        assert!(preset_by_name("2g").is_err());
        assert_eq!(preset_by_name("5G").unwrap().name, "5g");
    }

    #[test]
    fn validation_rejects_bad_profiles() {
        let mut p = constant(50.0);
        p.latency_components[0].weight = 0.9;
        assert!(p.validate().is_err());
        let mut p = constant(50.0);
        p.latency_components.clear();
        assert!(p.validate().is_err());
        let mut p = constant(50.0);
        p.per_batch_loss_prob = 1.5;
        assert!(p.validate().is_err());
        let mut p = constant(50.0);
        p.regime_persistence = 1.0;
        assert!(p.validate().is_err());
        let mut p = constant(50.0);
        p.latency_components[0].mean_ms = -1.0;
        assert!(p.validate().is_err());
        assert!(passthrough().validate().is_ok());
        assert_eq!(resolve_profile("none").unwrap(), passthrough());
    }

    #[test]
    fn degenerate_component_is_constant() {
        let p = constant(50.0);
        let mut rng = connection_rng(3, 0);
        let mut s = LatencySampler::new(&p);
        assert!((0..1000).all(|_| sample_latency(&mut s, &mut rng) == 50.0));
    }

    #[test]
    fn truncated_at_zero() {
        let mut p = constant(1.0);
        p.latency_components[0].std_ms = 50.0;
        let mut rng = connection_rng(3, 0);
        let mut s = LatencySampler::new(&p);
        assert!((0..10_000).all(|_| sample_latency(&mut s, &mut rng) >= 0.0));
    }

    #[test]
    fn clean_channel_delivers_exactly_after_latency() {
        let mut ch = NetemChannel::new(constant(50.0), 0).unwrap();
        let p = payload(4);
        match ch.transmit(&p, 250.0).unwrap() {
            Transmission::Delivered(ev) => {
                assert_eq!(ev.deliver_at_ms, 300.0);
                assert_eq!(ev.payload, p);
                assert!(ev.corrupted.is_empty());
            }
            Transmission::Dropped => panic!("dropped"),
        }
    }

    #[test]
    fn full_loss_always_drops() {
        let mut prof = constant(50.0);
        prof.per_batch_loss_prob = 1.0;
        let mut ch = NetemChannel::new(prof, 0).unwrap();
        for s in 0..100 {
            assert_eq!(ch.transmit(&payload(s), 0.0).unwrap(), Transmission::Dropped);
        }
        assert_eq!(ch.stats().dropped_batches, 100);
    }

    #[test]
    fn full_corruption_changes_every_amplitude() {
        let mut prof = constant(50.0);
        prof.per_sample_corruption_prob = 1.0;
        let mut ch = NetemChannel::new(prof, 0).unwrap();
        let p = payload(9);
        let Transmission::Delivered(ev) = ch.transmit(&p, 0.0).unwrap() else {
            panic!("dropped")
        };
        let sent = BatchPayload::decode(&p).unwrap();
        let got = BatchPayload::decode(&ev.payload).unwrap();
        assert_eq!(got.seq_no, sent.seq_no);
        assert_eq!(got.send_ts_ms, sent.send_ts_ms);
        assert!(sent.samples.iter().zip(got.samples).all(|(a, b)| *a != b));
        assert_eq!(ev.corrupted.len(), 16);
    }

    #[test]
    fn wrong_payload_length_is_rejected() {
        let mut ch = NetemChannel::new(constant(50.0), 0).unwrap();
        assert!(matches!(
            ch.transmit(&[0u8; 75], 0.0),
            Err(ChannelError::InvalidArgument(_))
        ));
    }

    #[test]
    fn delivery_is_in_order() {
        let mut prof = constant(100.0);
        prof.latency_components[0].std_ms = 80.0;
        let mut ch = NetemChannel::new(prof, 0).unwrap();
        let mut last = f64::NEG_INFINITY;
        for s in 0..2000 {
            if let Transmission::Delivered(ev) = ch.transmit(&payload(s), s as f64 * 10.0).unwrap() {
                assert!(ev.deliver_at_ms >= last);
                last = ev.deliver_at_ms;
            }
        }
    }

    #[test]
    fn scripted_faults_are_exact() {
        let mut plan = FaultPlan::default();
        plan.drop_batches.insert(3);
        plan.corrupt_samples.insert((5, 0));
        plan.corrupt_samples.insert((5, 15));
        let mut ch = NetemChannel::new(constant(10.0), 0).unwrap().with_faults(plan);
        let mut dropped = vec![];
        let mut corrupted = vec![];
        for s in 0..10 {
            match ch.transmit(&payload(s), 0.0).unwrap() {
                Transmission::Dropped => dropped.push(s),
                Transmission::Delivered(ev) => corrupted.extend(ev.corrupted.iter().map(|&i| (s, i))),
            }
        }
        assert_eq!(dropped, vec![3]);
        assert_eq!(corrupted, vec![(5, 0), (5, 15)]);
        assert_eq!(ch.stats().corrupted_samples, 2);
    }

    #[test]
    fn disconnect_after_n_batches() {
        let mut ch = NetemChannel::new(constant(10.0), 0).unwrap().with_disconnect_after(2);
        ch.transmit(&payload(0), 0.0).unwrap();
        ch.transmit(&payload(1), 0.0).unwrap();
        assert!(matches!(
            ch.transmit(&payload(2), 0.0),
            Err(ChannelError::Disconnected(2))
        ));
    }

    #[test]
    fn skew_shifts_delivery() {
        let mut prof = constant(20.0);
        prof.clock_skew_ms = -5.0;
        let mut ch = NetemChannel::new(prof, 0).unwrap();
        let Transmission::Delivered(ev) = ch.transmit(&payload(0), 100.0).unwrap() else {
            panic!()
        };
        assert_eq!(ev.deliver_at_ms, 115.0);
    }

    #[test]
    fn fixed_seed_reproduces_schedule() {
        let run = || {
            let mut ch = NetemChannel::new(preset(Generation::G3).with_seed(11), 2).unwrap();
            (0..500)
                .map(|s| ch.transmit(&payload(s), s as f64 * 62.5).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn profile_json_roundtrip_and_defaults() {
        let p = preset(Generation::G3).with_seed(5);
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<ChannelProfile>(&text).unwrap(), p);
        let minimal = r#"{"name":"x","latency_components":[{"weight":1,"mean_ms":40,"std_ms":2}],
            "per_sample_corruption_prob":0.01,"per_batch_loss_prob":0.0}"#;
        let p: ChannelProfile = serde_json::from_str(minimal).unwrap();
        assert_eq!(p.regime_persistence, 0.0);
        assert_eq!(p.seed, 0);
        p.validate().unwrap();
    }
}
