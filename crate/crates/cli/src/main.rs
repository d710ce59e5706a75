use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use ecgpipe::analysis::{self, DEFAULT_BIN_WIDTH_MS, DEFAULT_CLAMP_MS};
use ecgpipe::clock::{unix_ms, Pacer};
use ecgpipe::ecg::{batchify, generate_synthetic_ecg, load_series, save_series, SampleSeries};
use ecgpipe::inference::{classify_stream, default_model, segment_stream, InferenceLogEntry, Model, SEGMENT_LEN};
use ecgpipe::netem::{resolve_profile, NetemChannel};
use ecgpipe::runner::{emit_report, load_config, run_experiment};
use ecgpipe::transport::proxy::start_proxy;
use ecgpipe::transport::{
    broker_serve, load_log, BrokerConfig, Client, JsonlAppender, ReceiveLogEntry, SendLogEntry, TcpChunkListener,
};

#[derive(Parser)]
#[command(name = "ecgpipe", version, about = "ECG telemetry over emulated cellular links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic single-lead ECG as CSV.
    Gen {
        #[arg(long, default_value_t = 420.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 72.0)]
        hr_bpm: f64,
        #[arg(long, default_value_t = 15.0)]
        noise_uv: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the seeded default CNN as a JSON model file.
    ModelInit {
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a broker on a TCP address, logging every received batch.
    Broker {
        #[arg(long, default_value = "127.0.0.1:1883")]
        listen: String,
        #[arg(long)]
        recv_log: PathBuf,
        /// Exit once this many sessions have ended.
        #[arg(long)]
        exit_after_sessions: Option<u64>,
    },
    /// Stream a CSV recording to a broker through an emulated link.
    Publish {
        #[arg(long)]
        broker: String,
        /// `none`, `3g`, `4g`, `5g` or a profile JSON file.
        #[arg(long, default_value = "none")]
        profile: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "phone-a")]
        client_id: String,
        #[arg(long)]
        send_log: PathBuf,
        /// Release batches this many times faster than real time.
        #[arg(long, default_value_t = 1.0)]
        pace: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// TCP proxy impairing the client-to-broker direction.
    Proxy {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        upstream: String,
        #[arg(long)]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify 10 s segments of a CSV recording or a receive log.
    Infer {
        /// JSON model file; the seeded default network when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        /// Only this client's entries when reading a receive log.
        #[arg(long)]
        session: Option<String>,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline analysis of one session's logs.
    Analyze {
        #[arg(long)]
        send_log: PathBuf,
        #[arg(long)]
        recv_log: PathBuf,
        #[arg(long)]
        infer_log: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = analysis::DEFAULT_BLE_ALLOWANCE_MS)]
        ble_allowance_ms: f64,
        #[arg(long, default_value_t = analysis::DEFAULT_BUDGET_MS)]
        budget_ms: f64,
    },
    /// Run a full experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pace: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen {
            duration_s,
            hr_bpm,
            noise_uv,
            seed,
            out,
        } => {
            let series = generate_synthetic_ecg(duration_s, hr_bpm, noise_uv, seed)?;
            save_series(&series, &out)?;
            println!("wrote {} samples to {}", series.len(), out.display());
        }
        Command::ModelInit { seed, out } => {
            default_model(seed).save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Broker {
            listen,
            recv_log,
            exit_after_sessions,
        } => broker(&listen, &recv_log, exit_after_sessions)?,
        Command::Publish {
            broker,
            profile,
            input,
            client_id,
            send_log,
            pace,
            seed,
        } => publish(&broker, &profile, &input, &client_id, &send_log, pace, seed)?,
        Command::Proxy {
            listen,
            upstream,
            profile,
            seed,
        } => {
            let profile = resolve_profile(&profile)?.with_seed(seed);
            let handle = start_proxy(&listen, &upstream, profile)?;
            println!("proxy listening on {} -> {upstream}", handle.addr());
            std::io::stdout().flush()?;
            loop {
                thread::sleep(Duration::from_secs(3600));
            }
        }
        Command::Infer {
            model,
            input,
            session,
            workers,
            out,
        } => infer(model.as_deref(), &input, session.as_deref(), workers, &out)?,
        Command::Analyze {
            send_log,
            recv_log,
            infer_log,
            out_dir,
            ble_allowance_ms,
            budget_ms,
        } => analyze(
            &send_log,
            &recv_log,
            infer_log.as_deref(),
            &out_dir,
            ble_allowance_ms,
            budget_ms,
        )?,
        Command::Run { config, pace, out_dir } => {
            let (mut cfg, base) = load_config(&config)?;
            if let Some(p) = pace {
                cfg.pace = p;
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let outcome = run_experiment(&cfg, &base)?;
            emit_report(&outcome, &cfg.out_dir)?;
            for r in &outcome.report.runs {
                match &r.error {
                    None => println!("part {} run {}: completed", r.part, r.run),
                    Some(e) => println!("part {} run {}: FAILED: {e}", r.part, r.run),
                }
            }
            println!("report written to {}", cfg.out_dir.join("report.json").display());
            if !outcome.all_completed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn broker(listen: &str, recv_log: &Path, exit_after: Option<u64>) -> Result<()> {
    let listener = TcpChunkListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    let log = JsonlAppender::create(recv_log, false).with_context(|| recv_log.display().to_string())?;
    let handle = broker_serve(
        Box::new(listener),
        BrokerConfig {
            log: Arc::new(log),
            ..BrokerConfig::in_memory()
        },
    );
    println!("broker listening on {}", handle.addr());
    std::io::stdout().flush()?;
    loop {
        thread::sleep(Duration::from_millis(20));
        if exit_after.is_some_and(|n| handle.sessions_ended() >= n) {
            break;
        }
    }
    let stats = handle.shutdown();
    println!(
        "broker done: {} connections, {} sessions ended, {} protocol errors",
        stats.connections, stats.sessions_ended, stats.protocol_errors
    );
    Ok(())
}

fn publish(
    broker: &str,
    profile: &str,
    input: &Path,
    client_id: &str,
    send_log: &Path,
    pace: f64,
    seed: u64,
) -> Result<()> {
    if !(pace >= 1.0 && pace.is_finite()) {
        bail!("--pace must be at least 1, got {pace}");
    }
    let profile = resolve_profile(profile)?.with_seed(seed);
    let recorded = load_series(input)?;
    let log = JsonlAppender::create(send_log, false).with_context(|| send_log.display().to_string())?;
    let mut client = Client::connect_tcp(broker, client_id, Duration::from_secs(5))?;
    let mut channel = NetemChannel::new(profile, 0)?;
    // send timestamps are Unix ms from the moment streaming starts
    let start = unix_ms().ceil();
    let series = SampleSeries::new(recorded.into_values(), start as i64)?;
    let pacer = Pacer::scaled(start, 1.0);
    let sent = client
        .publish_stream(batchify(&series, pace), &mut channel, &pacer, Some(&log))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    client.disconnect(&mut channel)?;
    let stats = channel.stats();
    println!(
        "published {} batches ({} dropped, {} samples corrupted by the link)",
        sent.len(),
        stats.dropped_batches,
        stats.corrupted_samples
    );
    Ok(())
}

fn infer(model: Option<&Path>, input: &Path, session: Option<&str>, workers: usize, out: &Path) -> Result<()> {
    let model = match model {
        Some(p) => Model::load(p)?,
        None => default_model(3),
    };
    let is_log = input.extension().is_some_and(|e| e == "jsonl");
    let (samples, label) = if is_log {
        let loaded = load_log::<ReceiveLogEntry>(input)?;
        if loaded.skipped() > 0 {
            eprintln!("skipped {} malformed lines in {}", loaded.skipped(), input.display());
        }
        let samples: Vec<i32> = loaded
            .entries
            .iter()
            .filter(|e| !e.corrupt && session.is_none_or(|s| e.session == s))
            .flat_map(|e| e.samples.iter().copied())
            .collect();
        (samples, session.unwrap_or_default().to_string())
    } else {
        (load_series(input)?.into_values(), String::new())
    };
    let (segments, pending) = segment_stream(&samples, SEGMENT_LEN, SEGMENT_LEN);
    let entries = classify_stream(&model, &label, &segments, workers.max(1));
    let log = JsonlAppender::<InferenceLogEntry>::create(out, false)?;
    for e in &entries {
        log.append(e);
    }
    let mi = entries.iter().filter(|e| e.probs.is_mi()).count();
    println!(
        "{} segments classified ({mi} MI), {pending} trailing samples unused",
        entries.len()
    );
    Ok(())
}

fn analyze(
    send_log: &Path,
    recv_log: &Path,
    infer_log: Option<&Path>,
    out_dir: &Path,
    ble_allowance_ms: f64,
    budget_ms: f64,
) -> Result<()> {
    let sent = load_log::<SendLogEntry>(send_log)?;
    let recv = load_log::<ReceiveLogEntry>(recv_log)?;
    let recv_skipped = recv.skipped();
    let session = sent.entries.first().map(|e| e.session.clone());
    let received: Vec<ReceiveLogEntry> = recv
        .entries
        .into_iter()
        .filter(|e| session.as_ref().is_none_or(|s| &e.session == s))
        .collect();
    let alignment = analysis::align_logs(&sent.entries, &received);
    let latency = analysis::latency_report(&alignment, DEFAULT_BIN_WIDTH_MS);
    let corruption = analysis::corruption_report(&alignment);

    let durations: Vec<f64> = match infer_log {
        Some(p) => load_log::<InferenceLogEntry>(p)?
            .entries
            .iter()
            .map(|e| e.duration_ms)
            .collect(),
        None => Vec::new(),
    };
    let duration_hist = analysis::inference_duration_histogram(&durations, DEFAULT_CLAMP_MS, DEFAULT_BIN_WIDTH_MS)?;
    let budget = infer_log.map(|_| analysis::end_to_end_budget(&alignment, &durations, ble_allowance_ms, budget_ms));

    fs::create_dir_all(out_dir)?;
    let err_str = |e: &analysis::AnalysisError| e.to_string();
    let report = json!({
        "session": session,
        "send_log_skipped_lines": sent.skipped(),
        "recv_log_skipped_lines": recv_skipped,
        "matched": alignment.matched,
        "corrupted": alignment.corrupted,
        "missing": alignment.missing,
        "latency": latency.as_ref().ok(),
        "latency_error": latency.as_ref().err().map(err_str),
        "corruption": corruption.as_ref().ok(),
        "corruption_error": corruption.as_ref().err().map(err_str),
        "inference_durations": duration_hist,
        "budget": budget.as_ref().and_then(|b| b.as_ref().ok()),
        "budget_error": budget.as_ref().and_then(|b| b.as_ref().err()).map(err_str),
    });
    fs::write(
        out_dir.join("analysis.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    let latency_csv = latency
        .as_ref()
        .map(|l| l.histogram.to_csv())
        .unwrap_or_else(|_| "bin_start_ms,count\n".into());
    fs::write(out_dir.join("latency_hist.csv"), latency_csv)?;
    fs::write(out_dir.join("duration_hist.csv"), duration_hist.histogram.to_csv())?;

    println!(
        "matched {}, corrupted {}, missing {} of {} samples",
        alignment.matched,
        alignment.corrupted,
        alignment.missing,
        alignment.total()
    );
    if let Ok(l) = &latency {
        println!(
            "latency mean {:.2} ms, std {:.2} ms, modes {:?}",
            l.mean_ms, l.std_ms, l.detected_modes
        );
    }
    Ok(())
}
