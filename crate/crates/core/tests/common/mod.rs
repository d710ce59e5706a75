//! Helpers shared by the integration tests: an independent CNN oracle,
//! random packet and model generators, and a single-session pipeline.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use ecgpipe::clock::Pacer;
use ecgpipe::ecg::{batchify, generate_synthetic_ecg};
use ecgpipe::inference::{LayerSpec, ModelSpec, SEGMENT_LEN};
use ecgpipe::mqtt::Packet;
use ecgpipe::netem::{ChannelProfile, ChannelStats, FaultPlan, LatencyComponent, NetemChannel};
use ecgpipe::transport::{broker_serve, BrokerConfig, Client, ReceiveLogEntry, SendLogEntry, SimNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight nested loops in f64, written against the model file format
/// rather than the engine's internals.
pub fn oracle_forward(spec: &ModelSpec, segment: &[i32]) -> Vec<f64> {
    // channels x length
    let mut map: Vec<Vec<f64>> = vec![segment.iter().map(|&v| v as f64 / 32768.0).collect()];
    let mut flat: Option<Vec<f64>> = None;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv1d {
                kernel_size,
                stride,
                weights,
                bias,
                ..
            } => {
                let len_in = map[0].len();
                let len_out = (len_in - kernel_size) / stride + 1;
                let mut out = vec![vec![0.0; len_out]; bias.len()];
                for o in 0..bias.len() {
                    for t in 0..len_out {
                        let mut acc = bias[o] as f64;
                        for (i, row) in map.iter().enumerate() {
                            for k in 0..*kernel_size {
                                acc += weights[o][i][k] as f64 * row[t * stride + k];
                            }
                        }
                        out[o][t] = acc;
                    }
                }
                map = out;
            }
            LayerSpec::LeakyRelu { alpha } => {
                let f = |v: f64| if v < 0.0 { v * *alpha as f64 } else { v };
                match flat.as_mut() {
                    Some(x) => x.iter_mut().for_each(|v| *v = f(*v)),
                    None => map.iter_mut().flatten().for_each(|v| *v = f(*v)),
                }
            }
            LayerSpec::MaxPool1d { size, stride } => {
                map = map
                    .iter()
                    .map(|row| {
                        let n = (row.len() - size) / stride + 1;
                        (0..n)
                            .map(|t| {
                                let mut m = f64::NEG_INFINITY;
                                for k in 0..*size {
                                    m = m.max(row[t * stride + k]);
                                }
                                m
                            })
                            .collect()
                    })
                    .collect();
            }
            LayerSpec::Flatten => {
                flat = Some(map.iter().flatten().copied().collect());
            }
            LayerSpec::Dense { weights, bias, .. } => {
                let x = flat.take().expect("dense after flatten");
                let mut y = Vec::with_capacity(bias.len());
                for (row, b) in weights.iter().zip(bias) {
                    let mut acc = *b as f64;
                    for (w, v) in row.iter().zip(&x) {
                        acc += *w as f64 * v;
                    }
                    y.push(acc);
                }
                flat = Some(y);
            }
            LayerSpec::Softmax => {
                let x = flat.take().expect("softmax after dense");
                let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                flat = Some(e.iter().map(|v| v / s).collect());
            }
        }
    }
    flat.expect("model ends in a vector")
}

fn uniform<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f32> {
    let lim = (6.0 / fan_in as f64).sqrt() as f32;
    (0..n).map(|_| rng.gen_range(-lim..lim)).collect()
}

/// A random but valid conv/pool/dense network over 2560 inputs.
pub fn random_spec<R: Rng>(rng: &mut R) -> ModelSpec {
    let mut layers = Vec::new();
    let mut ch = 1usize;
    let mut len = SEGMENT_LEN;
    for _ in 0..rng.gen_range(1..=4) {
        let out = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=9);
        let stride = rng.gen_range(1..=2);
        layers.push(LayerSpec::Conv1d {
            out_channels: out,
            kernel_size: k,
            stride,
            weights: (0..out)
                .map(|_| (0..ch).map(|_| uniform(rng, k, ch * k)).collect())
                .collect(),
            bias: uniform(rng, out, ch * k),
        });
        len = (len - k) / stride + 1;
        ch = out;
        if rng.gen_bool(0.7) {
            layers.push(LayerSpec::LeakyRelu {
                alpha: rng.gen_range(0.0..0.3),
            });
        }
        if rng.gen_bool(0.8) {
            let size = rng.gen_range(2..=3);
            let stride = rng.gen_range(1..=size);
            layers.push(LayerSpec::MaxPool1d { size, stride });
            len = (len - size) / stride + 1;
        }
    }
    layers.push(LayerSpec::Flatten);
    let mut inputs = ch * len;
    for _ in 0..rng.gen_range(0..=2) {
        let out = rng.gen_range(2..=24);
        layers.push(LayerSpec::Dense {
            out_dim: out,
            weights: (0..out).map(|_| uniform(rng, inputs, inputs)).collect(),
            bias: uniform(rng, out, inputs),
        });
        layers.push(LayerSpec::LeakyRelu {
            alpha: rng.gen_range(0.0..0.3),
        });
        inputs = out;
    }
    layers.push(LayerSpec::Dense {
        out_dim: 2,
        weights: (0..2).map(|_| uniform(rng, inputs, inputs)).collect(),
        bias: uniform(rng, 2, inputs),
    });
    layers.push(LayerSpec::Softmax);
    ModelSpec {
        input_length: SEGMENT_LEN,
        input_channels: 1,
        layers,
    }
}

pub fn random_segment<R: Rng>(rng: &mut R) -> Vec<i32> {
    let amp = [500, 5_000, 32_767][rng.gen_range(0..3)];
    (0..SEGMENT_LEN).map(|_| rng.gen_range(-amp..=amp)).collect()
}

fn random_topic<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(1..40);
    (0..n)
        .map(|_| {
            let c = rng.gen_range(0x20u32..0x2FFF);
            match char::from_u32(c) {
                Some(ch) if !matches!(ch, '+' | '#') => ch,
                _ => 'x',
            }
        })
        .collect()
}

/// A random packet the encoder accepts.
pub fn random_packet<R: Rng>(rng: &mut R) -> Packet {
    match rng.gen_range(0..8) {
        0 => Packet::Connect {
            client_id: random_topic(rng),
            keep_alive_s: rng.gen(),
        },
        1 => Packet::ConnAck {
            return_code: rng.gen_range(0..=5),
        },
        2 => {
            let n = if rng.gen_bool(0.05) {
                rng.gen_range(16_000..40_000)
            } else {
                rng.gen_range(0..200)
            };
            Packet::Publish {
                topic: random_topic(rng),
                payload: (0..n).map(|_| rng.gen()).collect(),
            }
        }
        3 => Packet::Subscribe {
            packet_id: rng.gen_range(1..=u16::MAX),
            topic: random_topic(rng),
        },
        4 => Packet::SubAck {
            packet_id: rng.gen_range(1..=u16::MAX),
            granted_qos: 0,
        },
        5 => Packet::PingReq,
        6 => Packet::PingResp,
        _ => Packet::Disconnect,
    }
}

/// Split `bytes` into random pieces, including empty and single bytes.
pub fn random_chunks<R: Rng>(rng: &mut R, bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let n = match rng.gen_range(0..4) {
            0 => 0,
            1 => 1,
            2 => rng.gen_range(1..8),
            _ => rng.gen_range(1..300),
        };
        let end = (i + n).min(bytes.len());
        out.push(bytes[i..end].to_vec());
        i = end;
    }
    out
}

pub fn constant_profile(latency_ms: f64) -> ChannelProfile {
    ChannelProfile {
        name: "constant".into(),
        latency_components: vec![LatencyComponent {
            weight: 1.0,
            mean_ms: latency_ms,
            std_ms: 0.0,
        }],
        per_sample_corruption_prob: 0.0,
        per_batch_loss_prob: 0.0,
        clock_skew_ms: 0.0,
        regime_persistence: 0.0,
        seed: 0,
    }
}

pub struct Streamed {
    pub sent: Vec<SendLogEntry>,
    pub received: Vec<ReceiveLogEntry>,
    pub channel: ChannelStats,
}

/// gen -> batchify -> publish -> channel -> broker, unpaced, one session.
pub fn stream_through(profile: ChannelProfile, duration_s: f64, ecg_seed: u64, faults: FaultPlan) -> Streamed {
    let net = SimNetwork::new();
    let broker = broker_serve(Box::new(net.listen("edge").unwrap()), BrokerConfig::in_memory());
    let series = generate_synthetic_ecg(duration_s, 72.0, 15.0, ecg_seed).unwrap();
    let mut channel = NetemChannel::new(profile, 0).unwrap().with_faults(faults);
    let mut client = Client::connect_sim(&net, broker.addr(), "phone-a", 0.0).unwrap();
    let sent = client
        .publish_stream(batchify(&series, 1.0), &mut channel, &Pacer::unpaced(), None)
        .unwrap();
    client.disconnect(&mut channel).unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    while broker.sessions_ended() < 1 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(1));
    }
    let received = broker.receive_log();
    broker.shutdown();
    Streamed {
        sent,
        received,
        channel: channel.stats(),
    }
}

/// `m` distinct dropped batches and `k` distinct corrupted samples outside
/// them, among the first `batches` seq numbers.
pub fn fault_plan(seed: u64, batches: u32, k: usize, m: usize) -> FaultPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drop_batches = BTreeSet::new();
    while drop_batches.len() < m {
        drop_batches.insert(rng.gen_range(0..batches));
    }
    let mut corrupt_samples = BTreeSet::new();
    while corrupt_samples.len() < k {
        let seq = rng.gen_range(0..batches);
        if !drop_batches.contains(&seq) {
            corrupt_samples.insert((seq, rng.gen_range(0..16)));
        }
    }
    FaultPlan {
        drop_batches,
        corrupt_samples,
    }
}
