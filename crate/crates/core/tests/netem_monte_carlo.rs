mod common;

use ecgpipe::ecg::SampleBatch;
use ecgpipe::netem::{monte_carlo_latency, preset, Generation, NetemChannel, Transmission};
use ecgpipe::par::Parallelism;
use ecgpipe::transport::BatchPayload;

#[test]
fn five_g_mean_over_a_million_draws() {
    let est = monte_carlo_latency(&preset(Generation::G5).with_seed(9), 1_000_000, Parallelism::Workers(4));
    assert!((est.mean_ms - 114.0).abs() <= 0.5, "{}", est.mean_ms);
    assert!((est.std_ms - 6.0).abs() <= 0.1, "{}", est.std_ms);
}

#[test]
fn three_g_component_occupancy() {
    let est = monte_carlo_latency(&preset(Generation::G3).with_seed(4), 1_000_000, Parallelism::Workers(4));
    assert!((est.occupancy[0] - 0.65).abs() <= 0.01, "{:?}", est.occupancy);
    assert!((est.occupancy[1] - 0.35).abs() <= 0.01, "{:?}", est.occupancy);
    let mean = 0.65 * 137.0 + 0.35 * 210.0;
    assert!((est.mean_ms - mean).abs() <= 1.0, "{}", est.mean_ms);
}

#[test]
fn sample_mean_converges_within_three_standard_errors() {
    for (g, seed) in [(Generation::G4, 1), (Generation::G5, 2), (Generation::G4, 3)] {
        let p = preset(g).with_seed(seed);
        let n = 200_000;
        let est = monte_carlo_latency(&p, n, Parallelism::Sequential);
        let se = p.latency_std_ms() / (n as f64).sqrt();
        assert!(
            (est.mean_ms - p.latency_mean_ms()).abs() <= 3.0 * se,
            "{g:?}: {} vs {} (se {se})",
            est.mean_ms,
            p.latency_mean_ms()
        );
    }
}

#[test]
fn estimate_is_independent_of_worker_count() {
    let p = preset(Generation::G3).with_seed(8);
    let a = monte_carlo_latency(&p, 300_000, Parallelism::Sequential);
    let b = monte_carlo_latency(&p, 300_000, Parallelism::Workers(3));
    assert_eq!(a, b);
}

#[test]
fn corruption_rate_matches_profile() {
    let p = preset(Generation::G4).with_seed(12);
    let mut ch = NetemChannel::new(p.clone(), 0).unwrap();
    let batches = 20_000u32;
    let mut corrupted = 0usize;
    for seq in 0..batches {
        let payload = BatchPayload::from_batch(&SampleBatch {
            seq_no: seq,
            samples: [seq as i32; 16],
            send_ts_ms: seq as f64 * 62.5,
        })
        .encode();
        match ch.transmit(&payload, seq as f64 * 62.5).unwrap() {
            Transmission::Delivered(ev) => corrupted += ev.corrupted.len(),
            Transmission::Dropped => panic!("preset has no loss"),
        }
    }
    let n = batches as f64 * 16.0;
    let q = p.per_sample_corruption_prob;
    let se = (q * (1.0 - q) / n).sqrt();
    let rate = corrupted as f64 / n;
    assert!((rate - q).abs() <= 4.0 * se, "{rate} vs {q}");
    assert_eq!(ch.stats().corrupted_samples, corrupted as u64);
}

#[test]
fn loss_rate_matches_profile() {
    let mut p = common::constant_profile(20.0);
    p.per_batch_loss_prob = 0.1;
    p.seed = 3;
    let mut ch = NetemChannel::new(p, 0).unwrap();
    let payload = BatchPayload {
        send_ts_ms: 0,
        seq_no: 0,
        samples: [0; 16],
    }
    .encode();
    let dropped = (0..20_000)
        .filter(|&i| matches!(ch.transmit(&payload, i as f64).unwrap(), Transmission::Dropped))
        .count();
    let se = (0.1f64 * 0.9 / 20_000.0).sqrt();
    assert!((dropped as f64 / 20_000.0 - 0.1).abs() <= 4.0 * se);
}
