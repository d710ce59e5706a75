//! Experiment orchestration: for every part and run, one broker and two
//! publisher sessions streaming in parallel over their own emulated links,
//! then inference and analysis over the persisted logs.
//!
//! Runs are scheduled in virtual time (one batch every 62.5 virtual ms);
//! `pace` only sets how much faster than real time the wall clock runs, so
//! results do not depend on it.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    self, BudgetReport, CorruptionReport, DurationHistogram, LatencyReport, DEFAULT_BIN_WIDTH_MS,
    DEFAULT_BLE_ALLOWANCE_MS, DEFAULT_BUDGET_MS, DEFAULT_CLAMP_MS,
};
use crate::clock::Pacer;
use crate::ecg::{batchify, generate_synthetic_ecg};
use crate::inference::{
    classify_stream, default_model, segment_stream, InferenceLogEntry, Model, ModelError, SEGMENT_LEN,
};
use crate::netem::{resolve_profile, ChannelError, ChannelProfile, ChannelStats, NetemChannel};
use crate::transport::{
    broker_serve, load_log, BrokerConfig, Client, JsonlAppender, ReceiveLogEntry, SendLogEntry, SimNetwork,
};

/// How long a run may take on the wall clock beyond its paced duration
/// before the broker is forced down.
const DRAIN_GRACE: Duration = Duration::from_secs(30);
const SESSION_LABELS: [&str; 2] = ["a", "b"];

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Profile(#[from] ChannelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A preset name (`3g`, `4g`, `5g`), a path to a profile file, or an
/// inline profile object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Named(String),
    Inline(ChannelProfile),
}

impl ProfileRef {
    pub fn resolve(&self, base_dir: &Path) -> Result<ChannelProfile, ChannelError> {
        match self {
            ProfileRef::Inline(p) => {
                p.validate()?;
                Ok(p.clone())
            }
            ProfileRef::Named(s) => match resolve_profile(s) {
                Ok(p) => Ok(p),
                Err(_) if Path::new(s).is_relative() && base_dir.join(s).exists() => {
                    resolve_profile(&base_dir.join(s).display().to_string())
                }
                Err(e) => Err(e),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub ecg: u64,
    pub channel: u64,
    pub model: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            ecg: 1,
            channel: 2,
            model: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Profile pairs; session `a` uses the first, session `b` the second.
    pub parts: Vec<(ProfileRef, ProfileRef)>,
    pub runs_per_part: u32,
    pub run_duration_s: f64,
    /// Virtual-to-wall speed-up; 1 streams in real time.
    pub pace: f64,
    pub seeds: Seeds,
    /// JSON model file; the seeded default network when absent.
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub heart_rate_bpm: f64,
    pub noise_uv: f64,
    pub inference_workers: usize,
    pub ble_allowance_ms: f64,
    pub budget_ms: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let named = |s: &str| ProfileRef::Named(s.to_string());
        Self {
            parts: vec![(named("3g"), named("5g")), (named("4g"), named("5g"))],
            runs_per_part: 3,
            run_duration_s: 420.0,
            pace: 100.0,
            seeds: Seeds::default(),
            model: None,
            out_dir: PathBuf::from("out"),
            heart_rate_bpm: 72.0,
            noise_uv: 15.0,
            inference_workers: 2,
            ble_allowance_ms: DEFAULT_BLE_ALLOWANCE_MS,
            budget_ms: DEFAULT_BUDGET_MS,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::InvalidArgument(m));
        if self.runs_per_part < 1 {
            return bad("runs_per_part must be at least 1".into());
        }
        if !(self.run_duration_s > 0.0 && self.run_duration_s.is_finite()) {
            return bad(format!("run_duration_s must be positive, got {}", self.run_duration_s));
        }
        if !(self.pace >= 1.0 && self.pace.is_finite()) {
            return bad(format!("pace must be at least 1, got {}", self.pace));
        }
        if self.inference_workers == 0 {
            return bad("inference_workers must be at least 1".into());
        }
        Ok(())
    }
}

/// Read a config file. Relative model and profile paths resolve against
/// the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<(ExperimentConfig, PathBuf), RunnerError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| RunnerError::InvalidArgument(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(m) = &config.model {
        if m.is_relative() {
            config.model = Some(base.join(m));
        }
    }
    Ok((config, base))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub segments: usize,
    pub mi_segments: usize,
    /// Received samples left over after the last full segment.
    pub pending_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: String,
    pub client_id: String,
    pub profile: String,
    pub batches_sent: usize,
    pub batches_received: usize,
    pub receive_log_skipped_lines: usize,
    /// Injector ground truth.
    pub channel: ChannelStats,
    pub latency: Option<LatencyReport>,
    pub corruption: Option<CorruptionReport>,
    pub analysis_errors: Vec<String>,
    pub inference: InferenceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub part: usize,
    pub run: usize,
    pub profiles: Vec<String>,
    pub completed: bool,
    pub error: Option<String>,
    pub sessions: Vec<SessionReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileTotals {
    pub sessions: usize,
    pub streamed_s: f64,
    pub samples_sent: usize,
    pub missing: usize,
    pub corrupted: usize,
    pub pct_missing_or_unequal: f64,
    pub matched: usize,
    pub mean_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub runs: usize,
    pub completed_runs: usize,
    pub streamed_s: f64,
    pub by_profile: BTreeMap<String, ProfileTotals>,
}

/// Deterministic results: identical for identical configs and seeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunReport>,
    pub totals: Totals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTiming {
    pub session: String,
    pub inference_durations: DurationHistogram,
    pub budget: Option<BudgetReport>,
    pub budget_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub part: usize,
    pub run: usize,
    pub wall_ms: f64,
    pub sessions: Vec<SessionTiming>,
}

/// Wall-clock dependent results (inference timings and the end-to-end
/// budget built from them).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub runs: Vec<RunTiming>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub timing: TimingReport,
}

impl ExperimentOutcome {
    pub fn all_completed(&self) -> bool {
        self.report.runs.iter().all(|r| r.completed)
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one (part, run, session) stream, derived from a base seed.
pub fn derive_seed(base: u64, part: usize, run: usize, session: usize) -> u64 {
    mix(mix(mix(base) ^ part as u64) ^ ((run as u64) << 8 | session as u64))
}

pub fn file_stem(part: usize, run: usize, session: &str) -> String {
    format!("{part}_{run}_{session}")
}

pub fn client_id(session: &str) -> String {
    format!("phone-{session}")
}

/// Everything one publisher thread hands back.
struct Published {
    log: Vec<SendLogEntry>,
    channel: ChannelStats,
    error: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn publish_session(
    net: &SimNetwork,
    addr: &str,
    session: &str,
    profile: ChannelProfile,
    conn_id: u64,
    config: &ExperimentConfig,
    ecg_seed: u64,
    send_log: &Path,
) -> Published {
    let fail = |error: String, log: Vec<SendLogEntry>, channel: ChannelStats| Published {
        log,
        channel,
        error: Some(error),
    };
    let series = match generate_synthetic_ecg(config.run_duration_s, config.heart_rate_bpm, config.noise_uv, ecg_seed) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string(), Vec::new(), ChannelStats::default()),
    };
    let mut channel = match NetemChannel::new(profile, conn_id) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string(), Vec::new(), ChannelStats::default()),
    };
    let appender = match JsonlAppender::create(send_log, false) {
        Ok(a) => a,
        Err(e) => return fail(format!("{}: {e}", send_log.display()), Vec::new(), channel.stats()),
    };
    let id = client_id(session);
    let mut client = match Client::connect_sim(net, addr, &id, 0.0) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string(), Vec::new(), channel.stats()),
    };
    let pacer = Pacer::scaled(0.0, config.pace);
    let log = match client.publish_stream(batchify(&series, 1.0), &mut channel, &pacer, Some(&appender)) {
        Ok(log) => log,
        Err(e) => {
            let msg = e.to_string();
            return fail(msg, e.log, channel.stats());
        }
    };
    if let Err(e) = client.disconnect(&mut channel) {
        return fail(e.to_string(), log, channel.stats());
    }
    Published {
        log,
        channel: channel.stats(),
        error: None,
    }
}

struct Analyzed {
    report: SessionReport,
    timing: SessionTiming,
}

#[allow(clippy::too_many_arguments)]
fn analyze_session(
    session: &str,
    profile: &str,
    published: &Published,
    received: &[ReceiveLogEntry],
    skipped: usize,
    model: &Model,
    config: &ExperimentConfig,
    infer_log: &Path,
) -> Result<Analyzed, RunnerError> {
    let id = client_id(session);
    let mut errors = Vec::new();
    let alignment = analysis::align_logs(&published.log, received);
    let latency = analysis::latency_report(&alignment, DEFAULT_BIN_WIDTH_MS)
        .map_err(|e| errors.push(format!("latency: {e}")))
        .ok();
    let corruption = analysis::corruption_report(&alignment)
        .map_err(|e| errors.push(format!("corruption: {e}")))
        .ok();

    let stream: Vec<i32> = received
        .iter()
        .filter(|e| !e.corrupt)
        .flat_map(|e| e.samples.iter().copied())
        .collect();
    let (segments, pending_samples) = segment_stream(&stream, SEGMENT_LEN, SEGMENT_LEN);
    let entries = classify_stream(model, &id, &segments, config.inference_workers);
    let appender = JsonlAppender::<InferenceLogEntry>::create(infer_log, false).map_err(io_err(infer_log))?;
    for e in &entries {
        appender.append(e);
    }
    let durations: Vec<f64> = load_log::<InferenceLogEntry>(infer_log)
        .map_err(io_err(infer_log))?
        .entries
        .iter()
        .map(|e| e.duration_ms)
        .collect();
    let inference_durations =
        analysis::inference_duration_histogram(&durations, DEFAULT_CLAMP_MS, DEFAULT_BIN_WIDTH_MS)
            .expect("default clamp and bin width are valid");
    let (budget, budget_error) =
        match analysis::end_to_end_budget(&alignment, &durations, config.ble_allowance_ms, config.budget_ms) {
            Ok(b) => (Some(b), None),
            Err(e) => (None, Some(e.to_string())),
        };

    Ok(Analyzed {
        report: SessionReport {
            session: session.to_string(),
            client_id: id,
            profile: profile.to_string(),
            batches_sent: published.log.len(),
            batches_received: received.len(),
            receive_log_skipped_lines: skipped,
            channel: published.channel,
            latency,
            corruption,
            analysis_errors: errors,
            inference: InferenceSummary {
                segments: entries.len(),
                mi_segments: entries.iter().filter(|e| e.probs.is_mi()).count(),
                pending_samples,
            },
        },
        timing: SessionTiming {
            session: session.to_string(),
            inference_durations,
            budget,
            budget_error,
        },
    })
}

fn execute_run(
    config: &ExperimentConfig,
    part: usize,
    run: usize,
    profiles: &[ChannelProfile; 2],
    model: &Model,
    out_dir: &Path,
) -> Result<(Vec<SessionReport>, Vec<SessionTiming>), String> {
    let recv_path = out_dir.join(format!("{part}_{run}_broker_recv.jsonl"));
    let recv_log = JsonlAppender::create(&recv_path, false).map_err(|e| format!("{}: {e}", recv_path.display()))?;
    let net = SimNetwork::new();
    let listener = net
        .listen(&format!("broker-{part}-{run}"))
        .map_err(|e| format!("broker listen: {e}"))?;
    let broker = broker_serve(
        Box::new(listener),
        BrokerConfig {
            log: Arc::new(recv_log),
            ..BrokerConfig::in_memory()
        },
    );
    let addr = broker.addr().to_string();

    let published: Vec<Published> = thread::scope(|scope| {
        let handles: Vec<_> = SESSION_LABELS
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let profile = profiles[i]
                    .clone()
                    .with_seed(derive_seed(config.seeds.channel, part, run, i));
                let send_path = out_dir.join(format!("{}_send.jsonl", file_stem(part, run, label)));
                let (net, addr) = (&net, addr.as_str());
                let ecg_seed = derive_seed(config.seeds.ecg, part, run, i);
                scope.spawn(move || publish_session(net, addr, label, profile, i as u64, config, ecg_seed, &send_path))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("publisher thread panicked"))
            .collect()
    });

    let failures: Vec<String> = published
        .iter()
        .zip(SESSION_LABELS)
        .filter_map(|(p, l)| p.error.as_ref().map(|e| format!("session {l}: {e}")))
        .collect();
    if !failures.is_empty() {
        broker.shutdown_now();
        return Err(failures.join("; "));
    }
    let deadline = Instant::now() + DRAIN_GRACE;
    while broker.sessions_ended() < SESSION_LABELS.len() as u64 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(2));
    }
    if broker.sessions_ended() < SESSION_LABELS.len() as u64 {
        broker.shutdown_now();
        return Err("broker did not see both sessions end".into());
    }
    broker.shutdown();

    let loaded = load_log::<ReceiveLogEntry>(&recv_path).map_err(|e| format!("{}: {e}", recv_path.display()))?;
    let mut reports = Vec::new();
    let mut timings = Vec::new();
    for (i, label) in SESSION_LABELS.iter().enumerate() {
        let id = client_id(label);
        let received: Vec<ReceiveLogEntry> = loaded.entries.iter().filter(|e| e.session == id).cloned().collect();
        let infer_path = out_dir.join(format!("{}_infer.jsonl", file_stem(part, run, label)));
        let a = analyze_session(
            label,
            &profiles[i].name,
            &published[i],
            &received,
            loaded.skipped(),
            model,
            config,
            &infer_path,
        )
        .map_err(|e| e.to_string())?;
        reports.push(a.report);
        timings.push(a.timing);
    }
    Ok((reports, timings))
}

fn totals(report: &ExperimentReport, duration_s: f64) -> Totals {
    let mut t = Totals {
        runs: report.runs.len(),
        completed_runs: report.runs.iter().filter(|r| r.completed).count(),
        ..Totals::default()
    };
    let mut latency_sums: BTreeMap<String, f64> = BTreeMap::new();
    for s in report.runs.iter().flat_map(|r| &r.sessions) {
        let p = t.by_profile.entry(s.profile.clone()).or_default();
        p.sessions += 1;
        p.streamed_s += duration_s;
        t.streamed_s += duration_s;
        if let Some(c) = &s.corruption {
            p.samples_sent += c.total_sent;
            p.missing += c.missing_count;
            p.corrupted += c.corrupted_count;
        }
        if let Some(l) = &s.latency {
            p.matched += l.samples;
            *latency_sums.entry(s.profile.clone()).or_default() += l.mean_ms * l.samples as f64;
        }
    }
    for (name, p) in t.by_profile.iter_mut() {
        if p.samples_sent > 0 {
            p.pct_missing_or_unequal = 100.0 * (p.missing + p.corrupted) as f64 / p.samples_sent as f64;
        }
        if p.matched > 0 {
            p.mean_latency_ms = Some(latency_sums[name] / p.matched as f64);
        }
    }
    t
}

/// Run every part and run of `config`. Logs are written to
/// `config.out_dir` as they are produced; a failing run is recorded and the
/// remaining runs still execute.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentOutcome, RunnerError> {
    config.validate()?;
    let mut parts = Vec::new();
    for (a, b) in &config.parts {
        parts.push([a.resolve(base_dir)?, b.resolve(base_dir)?]);
    }
    let model = match &config.model {
        Some(path) => Model::load(path)?,
        None => default_model(config.seeds.model),
    };
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut outcome = ExperimentOutcome::default();
    for (p, profiles) in parts.iter().enumerate() {
        let part = p + 1;
        for run in 1..=config.runs_per_part as usize {
            let t0 = Instant::now();
            let result = execute_run(config, part, run, profiles, &model, out_dir);
            let wall_ms = t0.elapsed().as_secs_f64() * 1000.0;
            let names = profiles.iter().map(|p| p.name.clone()).collect();
            let (completed, error, sessions, timing) = match result {
                Ok((s, t)) => (true, None, s, t),
                Err(e) => (false, Some(e), Vec::new(), Vec::new()),
            };
            outcome.report.runs.push(RunReport {
                part,
                run,
                profiles: names,
                completed,
                error,
                sessions,
            });
            outcome.timing.runs.push(RunTiming {
                part,
                run,
                wall_ms,
                sessions: timing,
            });
        }
    }
    outcome.report.totals = totals(&outcome.report, config.run_duration_s);
    Ok(outcome)
}

/// Write `report.json`, `timing.json` and a latency/duration histogram CSV
/// pair per run-session.
pub fn emit_report(outcome: &ExperimentOutcome, out_dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let mut write = |name: String, text: String| -> Result<(), RunnerError> {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    write("report.json".into(), pretty_json(&outcome.report))?;
    write("timing.json".into(), pretty_json(&outcome.timing))?;
    for (r, t) in outcome.report.runs.iter().zip(&outcome.timing.runs) {
        for (s, st) in r.sessions.iter().zip(&t.sessions) {
            let stem = file_stem(r.part, r.run, &s.session);
            let latency_csv = s
                .latency
                .as_ref()
                .map(|l| l.histogram.to_csv())
                .unwrap_or_else(|| "bin_start_ms,count\n".into());
            write(format!("{stem}_latency_hist.csv"), latency_csv)?;
            write(
                format!("{stem}_duration_hist.csv"),
                st.inference_durations.histogram.to_csv(),
            )?;
        }
    }
    Ok(written)
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}
