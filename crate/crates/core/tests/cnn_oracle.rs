mod common;

use ecgpipe::inference::{default_spec, Model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(spec: ecgpipe::inference::ModelSpec, segment: &[i32]) -> f64 {
    let model = Model::from_spec(spec.clone()).unwrap();
    let got = model.forward(segment).unwrap();
    let want = common::oracle_forward(&spec, segment);
    assert_eq!(want.len(), 2);
    assert!((got.p_mi + got.p_normal - 1.0).abs() <= 1e-9);
    (got.p_mi - want[0]).abs().max((got.p_normal - want[1]).abs())
}

#[test]
fn random_models_match_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0C1E);
    let mut worst = 0f64;
    for _ in 0..120 {
        let spec = common::random_spec(&mut rng);
        let seg = common::random_segment(&mut rng);
        worst = worst.max(check(spec, &seg));
    }
    assert!(worst <= 1e-6, "max abs difference {worst}");
}

#[test]
fn default_architecture_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..20 {
        let seg = common::random_segment(&mut rng);
        let d = check(default_spec(seed), &seg);
        assert!(d <= 1e-6, "seed {seed}: {d}");
    }
}

#[test]
fn saved_models_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Model::from_spec(common::random_spec(&mut rng)).unwrap();
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    let seg = common::random_segment(&mut rng);
    assert_eq!(model.forward(&seg).unwrap(), back.forward(&seg).unwrap());
}

#[test]
fn wrong_input_length_is_rejected() {
    let model = Model::from_spec(default_spec(1)).unwrap();
    assert!(model.forward(&[0; 2559]).is_err());
    assert!(model.forward(&[]).is_err());
}
