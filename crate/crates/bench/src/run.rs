// SPDX-License-Identifier: Apache-2.0

//! Multi-process benchmark runs.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use simshm::{compute_delivery, create_region, destroy_region, ClockSource, DiagnosticsSnapshot};

use crate::config::{BenchConfig, Transport};
use crate::error::{Error, Result};
use crate::model;
use crate::process::{Launcher, WorkerProcess};
use crate::report::{
    BenchReport, Diagnostics, HostInfo, LatencySample, Metadata, ModelCheck, ReaderRun, RunReport,
    Totals,
};
use crate::stats::{ci95, compute_stats};
use crate::worker::{ReaderLog, Role, WriterLog, WorkerSpec};

const STARTUP_TIMEOUT: Duration = Duration::from_secs(15);
const SHUTDOWN_GRACE: Duration = Duration::from_secs(5);

/// Everything the workers of one run left behind.
#[derive(Debug, Default)]
pub struct RawRun {
    pub writer: WriterLog,
    pub readers: Vec<ReaderLog>,
    pub diagnostics: Option<Diagnostics>,
    pub flags: Vec<String>,
}

/// Runs every configured run and assembles the report. A run whose
/// processes fail is kept, flagged and marked invalid.
pub fn run_benchmark(cfg: &BenchConfig, launcher: &Launcher) -> Result<BenchReport> {
    cfg.validate()?;
    crate::pace::tighten_timer_slack();
    let priority_elevated = cfg.elevate_priority && crate::pace::elevate_priority();
    let dir = tempfile::tempdir()?;
    let mut runs = Vec::new();
    let mut samples = Vec::new();
    let mut workers_elevated = true;
    for run in 0..cfg.runs {
        log::info!("{} {} run {}/{}", cfg.transport.label(), cfg.workload.name(), run + 1, cfg.runs);
        let raw = execute_run(cfg, launcher, run, dir.path()).unwrap_or_else(|e| RawRun {
            flags: vec![format!("run invalidated: {e}")],
            ..RawRun::default()
        });
        workers_elevated &= raw.writer.priority_elevated
            && raw.readers.iter().all(|r| r.priority_elevated);
        let (report, mut kept) = analyze_run(cfg, run, &raw);
        runs.push(report);
        samples.append(&mut kept);
    }
    assemble(cfg, runs, samples, priority_elevated && workers_elevated)
}

fn reader_role(t: Transport) -> Role {
    match t {
        Transport::Sim => Role::SimReader,
        Transport::Baseline => Role::BaselineSubscriber,
    }
}

fn writer_role(t: Transport) -> Role {
    match t {
        Transport::Sim => Role::SimWriter,
        Transport::Baseline => Role::BaselinePublisher,
    }
}

fn base_spec(cfg: &BenchConfig, role: Role, out: &Path) -> WorkerSpec {
    let mut spec = WorkerSpec::new(role, &cfg.stream, cfg.workload, out.to_owned());
    spec.poll_interval_ns = cfg.poll_interval_ns;
    spec.reader_work_ns = cfg.reader_work_ns;
    spec.validate_granule = cfg.validate_granule;
    spec.elevate_priority = cfg.elevate_priority;
    spec.idle_timeout_ns = (20 * cfg.workload.interval_ns() + 2 * cfg.reader_work_ns).max(10_000_000_000);
    spec
}

/// Spawns the processes of one run, waits for them and collects their logs.
pub fn execute_run(cfg: &BenchConfig, launcher: &Launcher, run: u32, dir: &Path) -> Result<RawRun> {
    let kind = cfg.workload.frame_kind();
    let writer_out = dir.join(format!("run{run}_writer.json"));
    let reader_out = |i: u32| dir.join(format!("run{run}_reader{i}.json"));
    let mut writer_spec = base_spec(cfg, writer_role(cfg.transport), &writer_out);
    writer_spec.frames = cfg.frames_per_run;
    writer_spec.subscribers = cfg.readers;
    let reader_spec = |i: u32| {
        let mut s = base_spec(cfg, reader_role(cfg.transport), &reader_out(i));
        s.reader_id = i;
        s.stop_at_seq = cfg.frames_per_run;
        s
    };

    let region = match cfg.transport {
        Transport::Sim => {
            destroy_region(&cfg.stream)?;
            Some(create_region(&cfg.stream, kind)?)
        }
        Transport::Baseline => None,
    };

    let mut writer: WorkerProcess;
    let mut readers = Vec::new();
    match cfg.transport {
        Transport::Sim => {
            for i in 0..cfg.readers {
                readers.push(launcher.spawn(&reader_spec(i))?);
            }
            for r in &mut readers {
                r.expect("READY", STARTUP_TIMEOUT)?;
            }
            writer = launcher.spawn(&writer_spec)?;
            writer.expect("READY", STARTUP_TIMEOUT)?;
        }
        Transport::Baseline => {
            writer = launcher.spawn(&writer_spec)?;
            writer.expect("READY", STARTUP_TIMEOUT)?;
            for i in 0..cfg.readers {
                readers.push(launcher.spawn(&reader_spec(i))?);
            }
            for r in &mut readers {
                r.expect("READY", STARTUP_TIMEOUT)?;
            }
        }
    }

    let mut flags = Vec::new();
    let publish_time = Duration::from_nanos(cfg.workload.interval_ns() * cfg.frames_per_run);
    writer.finish(publish_time + Duration::from_secs(30))?;
    let reader_grace = SHUTDOWN_GRACE + Duration::from_nanos(2 * cfg.reader_work_ns);
    for (i, r) in readers.iter_mut().enumerate() {
        if r.wait_timeout(reader_grace)?.is_none() {
            flags.push(format!("reader {i} never saw the last frame"));
            r.close_stdin();
        }
        r.finish(SHUTDOWN_GRACE)?;
    }

    let writer_log: WriterLog = read_log(&writer_out)?;
    let reader_logs = (0..cfg.readers)
        .map(|i| read_log::<ReaderLog>(&reader_out(i)))
        .collect::<Result<Vec<_>>>()?;
    let diagnostics = region.map(|r| {
        let d = Diagnostics::from(DiagnosticsSnapshot::from_region(&r));
        drop(r);
        d
    });
    if cfg.transport == Transport::Sim {
        destroy_region(&cfg.stream)?;
    }
    Ok(RawRun {
        writer: writer_log,
        readers: reader_logs,
        diagnostics,
        flags,
    })
}

fn read_log<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Turns one run's logs into latency samples and stats.
///
/// Latency is the reader's receive stamp minus the writer's pre-publish
/// stamp for the same sequence. Frames within the warmup are dropped;
/// negative latencies are excluded and counted.
pub fn analyze_run(cfg: &BenchConfig, run: u32, raw: &RawRun) -> (RunReport, Vec<LatencySample>) {
    let mut flags = raw.flags.clone();
    let published: HashMap<u64, u64> = raw
        .writer
        .publishes
        .iter()
        .map(|p| (p.seq, p.publish_ts_ns))
        .collect();
    let first_seq = raw.writer.publishes.first().map_or(1, |p| p.seq);
    let cutoff = first_seq + cfg.warmup_discard;
    let counted = (raw.writer.publishes.len() as u64).saturating_sub(cfg.warmup_discard);

    let mut samples = Vec::new();
    let mut readers = Vec::new();
    let (mut observed_total, mut expected_total) = (0u64, 0u64);
    for log in &raw.readers {
        let mut latencies = Vec::new();
        let mut observed = Vec::new();
        let mut negative = 0;
        for a in log.arrivals.iter().filter(|a| a.seq >= cutoff) {
            let Some(&publish_ts_ns) = published.get(&a.seq) else {
                flags.push(format!("reader {} saw unpublished seq {}", log.reader_id, a.seq));
                continue;
            };
            if observed.last().is_some_and(|&s| s >= a.seq - cutoff + 1) {
                continue;
            }
            observed.push(a.seq - cutoff + 1);
            if a.recv_ts_ns < publish_ts_ns {
                negative += 1;
                continue;
            }
            let latency_ns = a.recv_ts_ns - publish_ts_ns;
            latencies.push(latency_ns);
            samples.push(LatencySample {
                run,
                reader_id: log.reader_id,
                seq: a.seq,
                publish_ts_ns,
                recv_ts_ns: a.recv_ts_ns,
                latency_ns,
            });
        }
        let delivery = compute_delivery(&observed, counted);
        observed_total += delivery.observed;
        expected_total += counted;
        if log.torn > 0 {
            flags.push(format!("reader {} validated {} torn frames", log.reader_id, log.torn));
        }
        if negative > 0 {
            flags.push(format!(
                "reader {} had {negative} negative latencies",
                log.reader_id
            ));
        }
        readers.push(ReaderRun {
            reader_id: log.reader_id,
            stats: compute_stats(&latencies)
                .ok()
                .map(|s| s.with_delivery(delivery.delivery_ratio)),
            delivered: delivery.observed,
            drops_observed: delivery.drops_observed,
            delivery_ratio: delivery.delivery_ratio,
            non_monotonic: log.non_monotonic,
            torn: log.torn,
            contended: log.contended,
            integrity_errors: log.integrity_errors,
            negative_latency: negative,
        });
    }

    let pooled: Vec<u64> = samples.iter().map(|s| s.latency_ns).collect();
    let ratio = if expected_total == 0 {
        1.0
    } else {
        observed_total as f64 / expected_total as f64
    };
    let stats = compute_stats(&pooled).ok().map(|s| s.with_delivery(ratio));
    let process_ok = raw.flags.iter().all(|f| !f.starts_with("run invalidated"));
    let valid = process_ok && stats.is_some() && readers.len() == cfg.readers as usize;
    let diagnostics = raw.diagnostics.map(|mut d| {
        d.delivery_ratio = ratio;
        d.drops_observed = expected_total.saturating_sub(observed_total);
        d
    });
    let report = RunReport {
        run,
        valid,
        flags,
        published: raw.writer.publishes.len() as u64,
        stats,
        readers,
        diagnostics,
    };
    let samples = if valid { samples } else { Vec::new() };
    (report, samples)
}

fn assemble(
    cfg: &BenchConfig,
    runs: Vec<RunReport>,
    samples: Vec<LatencySample>,
    priority_elevated: bool,
) -> Result<BenchReport> {
    let valid: Vec<&RunReport> = runs.iter().filter(|r| r.valid).collect();
    if valid.is_empty() {
        let why: Vec<&str> = runs.iter().flat_map(|r| r.flags.iter().map(String::as_str)).collect();
        return Err(Error::Worker {
            role: "bench".into(),
            reason: format!("no valid runs: {}", why.join("; ")),
        });
    }
    let all: Vec<u64> = samples.iter().map(|s| s.latency_ns).collect();
    let (observed, expected) = valid
        .iter()
        .flat_map(|r| &r.readers)
        .fold((0.0, 0.0), |(o, e), rd| {
            let total = (rd.delivered + rd.drops_observed) as f64;
            (o + rd.delivered as f64, e + total)
        });
    let pooled = compute_stats(&all)?.with_delivery(if expected == 0.0 { 1.0 } else { observed / expected });

    let mut per_reader = Vec::new();
    for id in 0..cfg.readers {
        let lat: Vec<u64> = samples
            .iter()
            .filter(|s| s.reader_id == id)
            .map(|s| s.latency_ns)
            .collect();
        let (o, e) = valid
            .iter()
            .flat_map(|r| r.readers.iter().filter(|rd| rd.reader_id == id))
            .fold((0u64, 0u64), |(o, e), rd| (o + rd.delivered, e + rd.delivered + rd.drops_observed));
        if let Ok(s) = compute_stats(&lat) {
            per_reader.push(s.with_delivery(if e == 0 { 1.0 } else { o as f64 / e as f64 }));
        }
    }

    let means: Vec<f64> = valid.iter().filter_map(|r| r.stats.map(|s| s.mean)).collect();
    let ci95_mean = ci95(&means)?;

    let estimate = model::estimate(cfg.workload.frame_bytes())?;
    let model = ModelCheck {
        frame_bytes: estimate.frame_bytes,
        bw_writer_bytes_per_s: estimate.bw_writer_bytes_per_s,
        bw_reader_bytes_per_s: estimate.bw_reader_bytes_per_s,
        publish_ns: estimate.publish_ns,
        predicted_ns: estimate.predicted_ns,
        measured_mean_ns: pooled.mean,
    };
    let host = HostInfo {
        page_size: simshm::region::page_size(),
        stamp_overhead_ns: model::measure_stamp_overhead(ClockSource::Realtime, 100_000),
        cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };

    let mut totals = Totals {
        retained: all.len() as u64,
        invalid_runs: (runs.len() - valid.len()) as u64,
        ..Totals::default()
    };
    for rd in runs.iter().flat_map(|r| &r.readers) {
        totals.negative_latency += rd.negative_latency;
        totals.non_monotonic += rd.non_monotonic;
        totals.torn += rd.torn;
        totals.contended += rd.contended;
        totals.integrity_errors += rd.integrity_errors;
    }

    Ok(BenchReport {
        config: cfg.clone(),
        runs,
        pooled,
        per_reader,
        ci95_mean,
        model,
        host,
        totals,
        metadata: Metadata {
            transport_label: cfg.transport.label().into(),
            timestamp_point: "writer stamps immediately before the publish call".into(),
            clock: "CLOCK_REALTIME".into(),
            percentile_method: "nearest-rank".into(),
            priority_elevated,
        },
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Workload;
    use crate::worker::{Arrival, Publish};

    fn raw(published: u64, arrivals: &[(u64, u64)]) -> RawRun {
        RawRun {
            writer: WriterLog {
                publishes: (1..=published)
                    .map(|seq| Publish {
                        seq,
                        publish_ts_ns: seq * 1000,
                    })
                    .collect(),
                ..WriterLog::default()
            },
            readers: vec![ReaderLog {
                reader_id: 0,
                arrivals: arrivals
                    .iter()
                    .map(|&(seq, recv_ts_ns)| Arrival { seq, recv_ts_ns })
                    .collect(),
                ..ReaderLog::default()
            }],
            diagnostics: None,
            flags: vec![],
        }
    }

    fn cfg(frames: u64, warmup: u64) -> BenchConfig {
        let mut c = BenchConfig::new(Transport::Sim, Workload::lidar(), 1);
        c.frames_per_run = frames;
        c.warmup_discard = warmup;
        c
    }

    #[test]
    fn warmup_is_discarded_and_latency_is_recv_minus_publish() {
        let arrivals: Vec<(u64, u64)> = (1..=10).map(|s| (s, s * 1000 + 7)).collect();
        let (report, samples) = analyze_run(&cfg(10, 4), 0, &raw(10, &arrivals));
        assert!(report.valid);
        assert_eq!(samples.len(), 6);
        assert_eq!(samples[0].seq, 5);
        assert!(samples.iter().all(|s| s.latency_ns == 7));
        let stats = report.stats.unwrap();
        assert_eq!((stats.n, stats.delivery_ratio), (6, 1.0));
    }

    #[test]
    fn skipped_frames_lower_delivery() {
        let arrivals: Vec<(u64, u64)> = (1..=20).step_by(2).map(|s| (s, s * 1000 + 1)).collect();
        let (report, _) = analyze_run(&cfg(20, 0), 0, &raw(20, &arrivals));
        assert_eq!(report.readers[0].delivery_ratio, 0.5);
        assert_eq!(report.readers[0].drops_observed, 10);
    }

    #[test]
    fn negative_latency_is_excluded_and_counted() {
        let arrivals = [(1, 1001), (2, 1500), (3, 3002)];
        let (report, samples) = analyze_run(&cfg(3, 0), 0, &raw(3, &arrivals));
        assert_eq!(report.readers[0].negative_latency, 1);
        assert_eq!(samples.len(), 2);
        // the frame still counts as delivered
        assert_eq!(report.readers[0].delivered, 3);
        assert!(report.flags.iter().any(|f| f.contains("negative")));
    }

    #[test]
    fn failed_run_is_invalid_and_contributes_nothing() {
        let mut r = raw(3, &[(1, 1001), (2, 2001), (3, 3001)]);
        r.flags.push("run invalidated: reader crashed".into());
        let (report, samples) = analyze_run(&cfg(3, 0), 0, &r);
        assert!(!report.valid);
        assert!(samples.is_empty());
    }
}
