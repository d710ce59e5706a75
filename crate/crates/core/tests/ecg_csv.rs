use ecgpipe::ecg::{load_series, parse_csv, save_series, to_csv, SampleSeries};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_round_trip(values in proptest::collection::vec(any::<i32>(), 1..2000), start in -1_000_000i64..1_000_000) {
        let s = SampleSeries::new(values, start).unwrap();
        let back = parse_csv(&to_csv(&s), "mem").unwrap();
        prop_assert_eq!(back.values(), s.values());
        prop_assert_eq!(back.start_time_ms(), s.start_time_ms());
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ecg.csv");
    let s = ecgpipe::ecg::generate_synthetic_ecg(12.0, 80.0, 10.0, 4).unwrap();
    save_series(&s, &path).unwrap();
    assert_eq!(load_series(&path).unwrap(), s);
}
