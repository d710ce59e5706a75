//! Offline evaluation of send/receive/inference logs: per-sample
//! timestamps, alignment of sent against received samples, latency and
//! corruption statistics, and duration histograms.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecg::SAMPLE_PERIOD_MS;
use crate::transport::{ReceiveLogEntry, SendLogEntry};

pub const DEFAULT_WINDOW_LEN: usize = 64;
pub const DEFAULT_MAX_SHIFT: usize = 64;
pub const DEFAULT_BIN_WIDTH_MS: f64 = 2.0;
pub const DEFAULT_CLAMP_MS: f64 = 250.0;
pub const DEFAULT_BLE_ALLOWANCE_MS: f64 = 50.0;
pub const DEFAULT_BUDGET_MS: f64 = 300.0;
/// Minimum prominence mass of a histogram mode, as a fraction of all counts.
pub const MODE_MIN_MASS: f64 = 0.05;
pub const MODE_MIN_SEPARATION_MS: f64 = 20.0;
/// Consecutive unequal samples after which a window is re-anchored.
const RESYNC_RUN: usize = 4;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalysisError {
    #[error("empty report: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One sample with its provenance: the batch it travelled in (if known),
/// its index inside that batch and its (interpolated) timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub seq_no: Option<u32>,
    pub offset: usize,
    pub value: i32,
    pub ts_ms: f64,
}

/// Per-sample timestamps from per-batch times. Sample `i` of batch `b`
/// lies at `T_b + i * (T_{b+1} - T_b) / 16`; the last batch uses the
/// nominal sample period.
pub fn interpolate_batch_times(batch_times: &[f64], batch_len: usize) -> Vec<Vec<f64>> {
    batch_times
        .iter()
        .enumerate()
        .map(|(b, &t)| {
            let step = match batch_times.get(b + 1) {
                Some(&next) => (next - t) / batch_len as f64,
                None => SAMPLE_PERIOD_MS,
            };
            (0..batch_len).map(|i| t + i as f64 * step).collect()
        })
        .collect()
}

/// Interpolated receive timestamp of every sample in `log` (log order,
/// which the broker writes in receive order). Entries carrying fewer than
/// 16 samples still advance the batch clock.
pub fn interpolate_sample_timestamps(log: &[ReceiveLogEntry]) -> Vec<f64> {
    let times: Vec<f64> = log.iter().map(|e| e.recv_ts_ms).collect();
    interpolate_batch_times(&times, crate::ecg::BATCH_LEN)
        .into_iter()
        .zip(log)
        .flat_map(|(ts, e)| ts.into_iter().take(e.samples.len()))
        .collect()
}

pub fn sent_samples(log: &[SendLogEntry]) -> Vec<SampleRecord> {
    let times: Vec<f64> = log.iter().map(|e| e.send_ts_ms).collect();
    let ts = interpolate_batch_times(&times, crate::ecg::BATCH_LEN);
    log.iter()
        .zip(ts)
        .flat_map(|(e, ts)| {
            e.samples.iter().zip(ts).enumerate().map(|(i, (&v, t))| SampleRecord {
                seq_no: Some(e.seq_no),
                offset: i,
                value: v,
                ts_ms: t,
            })
        })
        .collect()
}

pub fn received_samples(log: &[ReceiveLogEntry]) -> Vec<SampleRecord> {
    let times: Vec<f64> = log.iter().map(|e| e.recv_ts_ms).collect();
    let ts = interpolate_batch_times(&times, crate::ecg::BATCH_LEN);
    log.iter()
        .zip(ts)
        .flat_map(|(e, ts)| {
            let seq = if e.corrupt { None } else { e.seq_no };
            e.samples
                .iter()
                .zip(ts)
                .enumerate()
                .map(move |(i, (&v, t))| SampleRecord {
                    seq_no: seq,
                    offset: i,
                    value: v,
                    ts_ms: t,
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SampleStatus {
    Matched { delay_ms: f64 },
    Corrupted,
    Missing,
}

/// Status of every sent sample, in send order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub statuses: Vec<SampleStatus>,
    pub matched: usize,
    pub corrupted: usize,
    pub missing: usize,
}

impl AlignmentResult {
    fn from_statuses(statuses: Vec<SampleStatus>) -> Self {
        let (mut matched, mut corrupted, mut missing) = (0, 0, 0);
        for s in &statuses {
            match s {
                SampleStatus::Matched { .. } => matched += 1,
                SampleStatus::Corrupted => corrupted += 1,
                SampleStatus::Missing => missing += 1,
            }
        }
        Self {
            statuses,
            matched,
            corrupted,
            missing,
        }
    }

    pub fn total(&self) -> usize {
        self.statuses.len()
    }

    pub fn delays(&self) -> impl Iterator<Item = f64> + '_ {
        self.statuses.iter().filter_map(|s| match s {
            SampleStatus::Matched { delay_ms } => Some(*delay_ms),
            _ => None,
        })
    }
}

fn judge(sent: &SampleRecord, recv: &SampleRecord) -> SampleStatus {
    if sent.value == recv.value {
        SampleStatus::Matched {
            delay_ms: recv.ts_ms - sent.ts_ms,
        }
    } else {
        SampleStatus::Corrupted
    }
}

/// Align received samples against sent ones.
///
/// Samples whose batch seq number survived are placed directly. Runs of
/// received samples without one are placed by sliding windows of
/// `window_len` samples over shifts `0..=max_shift` past the last placed
/// position; a window is accepted when at least half its values agree.
/// Sent samples nothing was placed on are missing.
pub fn align_and_diff(
    sent: &[SampleRecord],
    received: &[SampleRecord],
    window_len: usize,
    max_shift: usize,
) -> AlignmentResult {
    let window_len = window_len.max(1);
    let mut index: HashMap<(u32, usize), Vec<usize>> = HashMap::new();
    for (pos, s) in sent.iter().enumerate() {
        if let Some(seq) = s.seq_no {
            index.entry((seq, s.offset)).or_default().push(pos);
        }
    }
    let mut status: Vec<Option<SampleStatus>> = vec![None; sent.len()];
    let mut expected = 0usize;
    let mut orphans: Vec<&SampleRecord> = Vec::new();

    let place_orphans =
        |orphans: &mut Vec<&SampleRecord>, expected: &mut usize, status: &mut Vec<Option<SampleStatus>>| {
            let mut k = 0;
            while k < orphans.len() {
                let win = &orphans[k..(k + window_len).min(orphans.len())];
                let mut best: Option<(usize, usize)> = None;
                for shift in 0..=max_shift {
                    let p = *expected + shift;
                    if p >= sent.len() {
                        break;
                    }
                    let agree = win
                        .iter()
                        .enumerate()
                        .filter(|(j, r)| {
                            sent.get(p + j)
                                .is_some_and(|s| status[p + j].is_none() && s.value == r.value)
                        })
                        .count();
                    if best.is_none_or(|(_, b)| agree > b) {
                        best = Some((p, agree));
                    }
                }
                let Some((p, _)) = best.filter(|&(_, a)| a > 0 && 2 * a >= win.len()) else {
                    k += win.len();
                    continue;
                };
                // commit until a run of mismatches suggests the stream slipped
                let mut consumed = win.len();
                let mut run_start = None;
                for (j, r) in win.iter().enumerate() {
                    let Some(s) = sent.get(p + j) else {
                        consumed = j;
                        break;
                    };
                    if status[p + j].is_some() {
                        continue;
                    }
                    let st = judge(s, r);
                    if st == SampleStatus::Corrupted {
                        let rs = *run_start.get_or_insert(j);
                        if j + 1 - rs >= RESYNC_RUN && rs > 0 {
                            for q in rs..j {
                                status[p + q] = None;
                            }
                            consumed = rs;
                            break;
                        }
                    } else {
                        run_start = None;
                    }
                    status[p + j] = Some(st);
                }
                *expected = (p + consumed).min(sent.len());
                k += consumed.max(1);
            }
            orphans.clear();
        };

    for r in received {
        let slot = r.seq_no.and_then(|seq| {
            index
                .get(&(seq, r.offset))
                .and_then(|c| c.iter().copied().find(|&p| status[p].is_none()))
        });
        match slot {
            Some(p) => {
                place_orphans(&mut orphans, &mut expected, &mut status);
                status[p] = Some(judge(&sent[p], r));
                expected = p + 1;
            }
            None if r.seq_no.is_none() => orphans.push(r),
            // a seq number that was never sent, or a duplicate
            None => {}
        }
    }
    place_orphans(&mut orphans, &mut expected, &mut status);

    AlignmentResult::from_statuses(status.into_iter().map(|s| s.unwrap_or(SampleStatus::Missing)).collect())
}

/// Convenience over the log types with the default window parameters.
pub fn align_logs(sent: &[SendLogEntry], received: &[ReceiveLogEntry]) -> AlignmentResult {
    align_and_diff(
        &sent_samples(sent),
        &received_samples(received),
        DEFAULT_WINDOW_LEN,
        DEFAULT_MAX_SHIFT,
    )
}

/// Fixed-width histogram; bin `i` covers `[origin + i*w, origin + (i+1)*w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub origin_ms: f64,
    pub bin_width_ms: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins aligned to multiples of `bin_width_ms`, spanning the data.
    pub fn from_values(values: &[f64], bin_width_ms: f64) -> Self {
        if values.is_empty() {
            return Self {
                origin_ms: 0.0,
                bin_width_ms,
                counts: Vec::new(),
            };
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let origin_ms = (lo / bin_width_ms).floor() * bin_width_ms;
        let n = ((hi - origin_ms) / bin_width_ms).floor() as usize + 1;
        let mut counts = vec![0u64; n];
        for v in values {
            let i = (((v - origin_ms) / bin_width_ms).floor() as usize).min(n - 1);
            counts[i] += 1;
        }
        Self {
            origin_ms,
            bin_width_ms,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        self.origin_ms + i as f64 * self.bin_width_ms
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.origin_ms + (i as f64 + 0.5) * self.bin_width_ms
    }

    /// `bin_start_ms,count` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start_ms,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{c}", self.bin_start(i));
        }
        out
    }
}

/// Mode centers of `hist`, ascending.
///
/// The histogram is smoothed with a centered 3-bin moving average (zero
/// outside the data). Every local maximum (plateaus count once, at their
/// middle) gets a base: the higher of the lowest points reached walking
/// left and right before the curve rises above the peak. Its mass is the
/// area above that base in the surrounding region. Peaks with mass above
/// `min_mass` of all counts are accepted by height, skipping any closer
/// than `min_separation_ms` to one already accepted.
pub fn detect_modes(hist: &Histogram, min_mass: f64, min_separation_ms: f64) -> Vec<f64> {
    let n = hist.counts.len();
    if n == 0 {
        return Vec::new();
    }
    // 3 * smoothed value over bins -2..n+2; index k is bin k - 2
    let c = |i: isize| -> u64 {
        if i < 0 || i as usize >= n {
            0
        } else {
            hist.counts[i as usize]
        }
    };
    let s: Vec<u64> = (-2..n as isize + 2).map(|i| c(i - 1) + c(i) + c(i + 1)).collect();
    let total3 = 3.0 * hist.total() as f64;

    struct Peak {
        height: u64,
        bin: usize,
    }
    let mut peaks = Vec::new();
    let mut k = 1;
    while k + 1 < s.len() {
        let start = k;
        let mut end = k;
        while end + 1 < s.len() && s[end + 1] == s[start] {
            end += 1;
        }
        let h = s[start];
        let is_peak = h > 0 && s[start - 1] < h && end + 1 < s.len() && s[end + 1] < h;
        if is_peak {
            let mut left_min = h;
            let mut j = start;
            while j > 0 && s[j - 1] <= h {
                j -= 1;
                left_min = left_min.min(s[j]);
            }
            let mut right_min = h;
            let mut j = end;
            while j + 1 < s.len() && s[j + 1] <= h {
                j += 1;
                right_min = right_min.min(s[j]);
            }
            let base = left_min.max(right_min);
            let mut lo = start;
            while lo > 0 && s[lo - 1] > base {
                lo -= 1;
            }
            let mut hi = end;
            while hi + 1 < s.len() && s[hi + 1] > base {
                hi += 1;
            }
            let mass: u64 = s[lo..=hi].iter().map(|v| v - base).sum();
            if mass as f64 > min_mass * total3 {
                let mid = (start + end) / 2;
                peaks.push(Peak {
                    height: h,
                    bin: mid.clamp(2, n + 1) - 2,
                });
            }
        }
        k = end + 1;
    }

    peaks.sort_by(|a, b| b.height.cmp(&a.height).then(a.bin.cmp(&b.bin)));
    let mut modes: Vec<f64> = Vec::new();
    for p in peaks {
        let center = hist.bin_center(p.bin);
        if modes.iter().all(|m| (m - center).abs() >= min_separation_ms) {
            modes.push(center);
        }
    }
    modes.sort_by(f64::total_cmp);
    modes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub samples: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub histogram: Histogram,
    pub detected_modes: Vec<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn latency_report(alignment: &AlignmentResult, bin_width_ms: f64) -> Result<LatencyReport, AnalysisError> {
    if !(bin_width_ms > 0.0 && bin_width_ms.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!(
            "bin width must be positive, got {bin_width_ms}"
        )));
    }
    let delays: Vec<f64> = alignment.delays().collect();
    if delays.is_empty() {
        return Err(AnalysisError::Empty("no matched samples".into()));
    }
    let (mean_ms, std_ms) = mean_std(&delays);
    let histogram = Histogram::from_values(&delays, bin_width_ms);
    let detected_modes = detect_modes(&histogram, MODE_MIN_MASS, MODE_MIN_SEPARATION_MS);
    Ok(LatencyReport {
        samples: delays.len(),
        mean_ms,
        std_ms,
        histogram,
        detected_modes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub pct_missing_or_unequal: f64,
    pub missing_count: usize,
    pub corrupted_count: usize,
    pub total_sent: usize,
}

pub fn corruption_report(alignment: &AlignmentResult) -> Result<CorruptionReport, AnalysisError> {
    let total_sent = alignment.total();
    if total_sent == 0 {
        return Err(AnalysisError::Empty("nothing was sent".into()));
    }
    Ok(CorruptionReport {
        pct_missing_or_unequal: 100.0 * (alignment.missing + alignment.corrupted) as f64 / total_sent as f64,
        missing_count: alignment.missing,
        corrupted_count: alignment.corrupted,
        total_sent,
    })
}

/// Histogram over `[0, clamp_ms)` whose last bin also absorbs every value
/// at or above the clamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationHistogram {
    pub histogram: Histogram,
    pub clamp_ms: f64,
    /// Values strictly above the clamp.
    pub clamped_count: u64,
    pub clamped_fraction: f64,
}

pub fn inference_duration_histogram(
    durations_ms: &[f64],
    clamp_ms: f64,
    bin_width_ms: f64,
) -> Result<DurationHistogram, AnalysisError> {
    if !(bin_width_ms > 0.0 && clamp_ms > 0.0 && clamp_ms.is_finite()) {
        return Err(AnalysisError::InvalidArgument(format!(
            "clamp {clamp_ms} and bin width {bin_width_ms} must be positive"
        )));
    }
    let mut histogram = Histogram {
        origin_ms: 0.0,
        bin_width_ms,
        counts: Vec::new(),
    };
    if durations_ms.is_empty() {
        return Ok(DurationHistogram {
            histogram,
            clamp_ms,
            clamped_count: 0,
            clamped_fraction: 0.0,
        });
    }
    let n = (clamp_ms / bin_width_ms).ceil() as usize;
    histogram.counts = vec![0; n];
    let mut clamped_count = 0;
    for &d in durations_ms {
        if d > clamp_ms {
            clamped_count += 1;
        }
        let i = (d.max(0.0) / bin_width_ms).floor() as usize;
        histogram.counts[i.min(n - 1)] += 1;
    }
    Ok(DurationHistogram {
        histogram,
        clamp_ms,
        clamped_count,
        clamped_fraction: clamped_count as f64 / durations_ms.len() as f64,
    })
}

/// Nearest-rank percentile (`p` in 0..=100) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub mean_delay_ms: f64,
    pub p99_delay_ms: f64,
    pub mean_inference_ms: f64,
    pub p99_inference_ms: f64,
    pub ble_allowance_ms: f64,
    pub budget_ms: f64,
    /// `p99_ms <= budget_ms`; hardware dependent.
    pub within_budget: bool,
}

/// End-to-end time as transmission delay + inference duration + the BLE
/// allowance. Mean and p99 are composed from the per-component means and
/// p99s (delays and durations are not paired sample by sample).
pub fn end_to_end_budget(
    alignment: &AlignmentResult,
    inference_durations_ms: &[f64],
    ble_allowance_ms: f64,
    budget_ms: f64,
) -> Result<BudgetReport, AnalysisError> {
    let delays: Vec<f64> = alignment.delays().collect();
    if delays.is_empty() {
        return Err(AnalysisError::Empty("no matched samples".into()));
    }
    if inference_durations_ms.is_empty() {
        return Err(AnalysisError::Empty("no inference durations".into()));
    }
    let mean_delay_ms = mean_std(&delays).0;
    let mean_inference_ms = mean_std(inference_durations_ms).0;
    let p99_delay_ms = percentile(&delays, 99.0).expect("non-empty");
    let p99_inference_ms = percentile(inference_durations_ms, 99.0).expect("non-empty");
    let mean_ms = mean_delay_ms + mean_inference_ms + ble_allowance_ms;
    let p99_ms = p99_delay_ms + p99_inference_ms + ble_allowance_ms;
    Ok(BudgetReport {
        mean_ms,
        p99_ms,
        mean_delay_ms,
        p99_delay_ms,
        mean_inference_ms,
        p99_inference_ms,
        ble_allowance_ms,
        budget_ms,
        within_budget: p99_ms <= budget_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seq: Option<u32>, offset: usize, value: i32, ts: f64) -> SampleRecord {
        SampleRecord {
            seq_no: seq,
            offset,
            value,
            ts_ms: ts,
        }
    }

    fn stream(batches: u32) -> Vec<SampleRecord> {
        (0..batches)
            .flat_map(|b| (0..16).map(move |i| rec(Some(b), i, (b * 16 + i as u32) as i32 * 7 % 1001, 0.0)))
            .collect()
    }

    fn recv_entry(seq: u32, ts: f64, samples: Vec<i32>) -> ReceiveLogEntry {
        ReceiveLogEntry {
            session: "s".into(),
            seq_no: Some(seq),
            recv_ts_ms: ts,
            send_ts_ms: None,
            digest: String::new(),
            samples,
            corrupt: false,
        }
    }

    #[test]
    fn interpolation_between_batches() {
        let t = interpolate_batch_times(&[0.0, 16.0], 16);
        assert_eq!(t[0], (0..16).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn interpolation_single_batch_uses_nominal_spacing() {
        let t = interpolate_sample_timestamps(&[recv_entry(0, 0.0, vec![0; 16])]);
        let want: Vec<f64> = (0..16).map(|i| i as f64 * 3.90625).collect();
        assert_eq!(t, want);
        assert!(interpolate_sample_timestamps(&[]).is_empty());
    }

    #[test]
    fn interpolation_is_monotone() {
        let log: Vec<_> = [0.0, 50.0, 130.0, 131.0, 400.0]
            .iter()
            .enumerate()
            .map(|(i, &t)| recv_entry(i as u32, t, vec![0; 16]))
            .collect();
        let t = interpolate_sample_timestamps(&log);
        assert_eq!(t.len(), 80);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn identical_streams() {
        let s = stream(10);
        let a = align_and_diff(&s, &s, 64, 64);
        assert_eq!((a.matched, a.corrupted, a.missing), (160, 0, 0));
    }

    #[test]
    fn dropped_batch_is_sixteen_missing() {
        let s = stream(10);
        let r: Vec<_> = s.iter().copied().filter(|x| x.seq_no != Some(4)).collect();
        let a = align_and_diff(&s, &r, 64, 64);
        assert_eq!((a.matched, a.corrupted, a.missing), (144, 0, 16));
        assert!(a.statuses[64..80].iter().all(|s| *s == SampleStatus::Missing));
    }

    #[test]
    fn flipped_sample_is_one_corrupted() {
        let s = stream(10);
        let mut r = s.clone();
        r[37].value ^= 0x5a5a;
        let a = align_and_diff(&s, &r, 64, 64);
        assert_eq!((a.matched, a.corrupted, a.missing), (159, 1, 0));
        assert_eq!(a.statuses[37], SampleStatus::Corrupted);
    }

    #[test]
    fn orphan_runs_are_placed_by_window() {
        let s = stream(20);
        let mut r = s.clone();
        // batches 5..9 lose their seq numbers, batch 7 never arrives,
        // one value in batch 8 is damaged
        r.retain(|x| x.seq_no != Some(7));
        for x in r.iter_mut() {
            if matches!(x.seq_no, Some(5..=8)) {
                x.seq_no = None;
            }
        }
        let idx = r
            .iter()
            .position(|x| x.seq_no.is_none() && x.offset == 3 && x.value == s[8 * 16 + 3].value)
            .unwrap();
        r[idx].value += 1;
        let a = align_and_diff(&s, &r, 64, 64);
        assert_eq!(a.missing, 16);
        assert_eq!(a.corrupted, 1);
        assert_eq!(a.matched, 320 - 17);
        assert!(a.statuses[7 * 16..8 * 16].iter().all(|s| *s == SampleStatus::Missing));
        assert_eq!(a.statuses[8 * 16 + 3], SampleStatus::Corrupted);
    }

    #[test]
    fn garbage_orphans_do_not_claim_samples() {
        let s = stream(4);
        let mut r: Vec<_> = s.iter().copied().filter(|x| x.seq_no != Some(2)).collect();
        r.extend((0..16).map(|i| rec(None, i, -99999, 0.0)));
        let a = align_and_diff(&s, &r, 64, 64);
        assert_eq!((a.matched, a.corrupted, a.missing), (48, 0, 16));
    }

    #[test]
    fn degenerate_inputs() {
        let a = align_and_diff(&[], &[], 64, 64);
        assert_eq!(a.total(), 0);
        let s = stream(2);
        let a = align_and_diff(&s, &[], 64, 64);
        assert_eq!(a.missing, 32);
    }

    #[test]
    fn delays_use_timestamps() {
        let sent = vec![rec(Some(0), 0, 1, 10.0), rec(Some(0), 1, 2, 13.9)];
        let recv = vec![rec(Some(0), 0, 1, 110.0), rec(Some(0), 1, 2, 113.9)];
        let a = align_and_diff(&sent, &recv, 64, 64);
        let d: Vec<f64> = a.delays().collect();
        assert_eq!(d, vec![100.0, 100.0]);
    }

    fn alignment_with(delays: &[f64]) -> AlignmentResult {
        AlignmentResult::from_statuses(delays.iter().map(|&d| SampleStatus::Matched { delay_ms: d }).collect())
    }

    #[test]
    fn constant_delay_report() {
        let r = latency_report(&alignment_with(&[50.0; 1000]), 2.0).unwrap();
        assert_eq!(r.mean_ms, 50.0);
        assert_eq!(r.std_ms, 0.0);
        assert_eq!(r.histogram.total(), 1000);
        assert_eq!(r.detected_modes.len(), 1);
        assert!((r.detected_modes[0] - 50.0).abs() <= 2.0);
    }

    #[test]
    fn empty_latency_report_is_an_error() {
        let a = AlignmentResult::from_statuses(vec![SampleStatus::Missing; 3]);
        assert!(matches!(latency_report(&a, 2.0), Err(AnalysisError::Empty(_))));
    }

    #[test]
    fn two_separated_clusters_give_two_modes() {
        let mut d = Vec::new();
        for i in 0..650 {
            d.push(137.0 + (i % 9) as f64 - 4.0);
        }
        for i in 0..350 {
            d.push(210.0 + (i % 9) as f64 - 4.0);
        }
        let r = latency_report(&alignment_with(&d), 2.0).unwrap();
        assert_eq!(r.detected_modes.len(), 2, "{:?}", r.detected_modes);
        assert!((r.detected_modes[0] - 137.0).abs() <= 2.0);
        assert!((r.detected_modes[1] - 210.0).abs() <= 2.0);
    }

    #[test]
    fn small_bumps_and_close_peaks_are_ignored() {
        // a 2% bump is below the mass threshold
        let mut d = vec![100.0; 980];
        d.extend(vec![200.0; 20]);
        let h = Histogram::from_values(&d, 2.0);
        assert_eq!(detect_modes(&h, MODE_MIN_MASS, MODE_MIN_SEPARATION_MS).len(), 1);
        // two strong peaks 10 ms apart collapse into the taller one
        let mut d = vec![100.0; 500];
        d.extend(vec![110.0; 400]);
        let h = Histogram::from_values(&d, 2.0);
        let m = detect_modes(&h, MODE_MIN_MASS, MODE_MIN_SEPARATION_MS);
        assert_eq!(m, vec![101.0]);
    }

    #[test]
    fn corruption_percentages() {
        let a = AlignmentResult::from_statuses(vec![SampleStatus::Matched { delay_ms: 1.0 }; 4]);
        assert_eq!(corruption_report(&a).unwrap().pct_missing_or_unequal, 0.0);
        let a = AlignmentResult::from_statuses(vec![
            SampleStatus::Missing,
            SampleStatus::Corrupted,
            SampleStatus::Matched { delay_ms: 1.0 },
            SampleStatus::Matched { delay_ms: 1.0 },
        ]);
        let r = corruption_report(&a).unwrap();
        assert_eq!((r.missing_count, r.corrupted_count, r.total_sent), (1, 1, 4));
        assert_eq!(r.pct_missing_or_unequal, 50.0);
        let empty = AlignmentResult::from_statuses(vec![]);
        assert!(corruption_report(&empty).is_err());
    }

    #[test]
    fn duration_histogram_clamps() {
        let h = inference_duration_histogram(&[100.0; 5], 250.0, 2.0).unwrap();
        assert_eq!(h.histogram.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.clamped_fraction, 0.0);

        let h = inference_duration_histogram(&[240.0, 260.0], 250.0, 2.0).unwrap();
        assert_eq!(h.clamped_count, 1);
        assert_eq!(h.clamped_fraction, 0.5);
        assert_eq!(h.histogram.counts.len(), 125);
        assert_eq!(*h.histogram.counts.last().unwrap(), 1);
        assert_eq!(h.histogram.counts[120], 1);

        let h = inference_duration_histogram(&[], 250.0, 2.0).unwrap();
        assert_eq!(h.histogram.total(), 0);
        assert_eq!(h.clamped_fraction, 0.0);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&v, 100.0), Some(100.0));
        assert_eq!(percentile(&[5.0], 99.0), Some(5.0));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn budget_arithmetic() {
        let b = end_to_end_budget(&alignment_with(&[114.0; 10]), &[170.0; 3], 50.0, 300.0).unwrap();
        assert_eq!(b.mean_ms, 334.0);
        assert_eq!(b.p99_ms, 334.0);
        assert!(!b.within_budget);
        let b = end_to_end_budget(&alignment_with(&[0.0]), &[0.0], 0.0, 300.0).unwrap();
        assert_eq!((b.mean_ms, b.p99_ms), (0.0, 0.0));
        assert!(b.within_budget);
        assert!(end_to_end_budget(&alignment_with(&[]), &[1.0], 50.0, 300.0).is_err());
        assert!(end_to_end_budget(&alignment_with(&[1.0]), &[], 50.0, 300.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let h = Histogram::from_values(&[1.0, 3.5, 3.9], 2.0);
        assert_eq!(h.to_csv(), "bin_start_ms,count\n0,1\n2,2\n");
    }
}
