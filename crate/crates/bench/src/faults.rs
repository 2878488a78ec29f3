// SPDX-License-Identifier: Apache-2.0

//! Fault injection against live sim streams: a writer killed and
//! restarted, a reader killed among ten, a writer suspended past its
//! liveness deadline.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use simshm::{
    attach_region, create_region, destroy_region, AccessMode, ClockSource, Liveness, ReadOutcome,
    Reader,
};

use crate::config::Workload;
use crate::error::{Error, Result};
use crate::pace::{sleep_until, spin_until, tighten_timer_slack, RealtimeGuard};
use crate::process::{Launcher, WorkerProcess};
use crate::worker::{ReaderLog, Role, WriterLog, WorkerSpec};

const STARTUP_TIMEOUT: Duration = Duration::from_secs(15);
const CLOCK: ClockSource = ClockSource::Realtime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    KillWriter,
    KillReader,
    PauseWriter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub scenario: Scenario,
    pub workload: Workload,
    pub readers: u32,
    pub trials: u32,
    /// How long the writer publishes before and after a fault.
    pub run_ns: u64,
    /// Kill-writer: time between the kill and the restart.
    pub gap_ns: u64,
    pub deadline_ns: u64,
    /// Pause-writer: how long the writer stays suspended.
    pub pause_ns: u64,
    pub poll_interval_ns: u64,
    pub stream: String,
}

impl FaultConfig {
    pub fn new(scenario: Scenario) -> Self {
        FaultConfig {
            scenario,
            workload: Workload::lidar(),
            readers: match scenario {
                Scenario::KillWriter => 3,
                Scenario::KillReader => 10,
                Scenario::PauseWriter => 1,
            },
            trials: 1,
            run_ns: 1_000_000_000,
            gap_ns: 2_000_000_000,
            deadline_ns: 500_000_000,
            pause_ns: 600_000_000,
            poll_interval_ns: 1_000_000,
            stream: format!("/bench_fault_{}", std::process::id()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        if self.trials == 0 || self.poll_interval_ns == 0 {
            return Err(Error::Config("trials and poll interval must be positive".into()));
        }
        match self.scenario {
            Scenario::KillReader if self.readers < 2 => {
                Err(Error::Config("kill-reader needs at least two readers".into()))
            }
            Scenario::KillWriter if self.readers < 1 => {
                Err(Error::Config("kill-writer needs at least one reader".into()))
            }
            Scenario::KillWriter if self.gap_ns <= self.deadline_ns => Err(Error::Config(
                "the restart gap must exceed the liveness deadline".into(),
            )),
            Scenario::PauseWriter if self.pause_ns <= self.deadline_ns => Err(Error::Config(
                "the pause must exceed the liveness deadline".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: u32,
    pub passed: bool,
    pub failures: Vec<String>,
    /// Kill-writer: newest sequence in the region after the kill.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub killed_at_seq: Option<u64>,
    /// Kill-writer: first sequence of the restarted writer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resumed_at_seq: Option<u64>,
    /// Kill-reader: frames the writer published.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub published: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub survivors_delivered: Vec<u64>,
    /// Kill-reader: survivors' mean latency before and after the kill.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub survivor_mean_ns: Option<(f64, f64)>,
    /// Pause-writer: detection time measured from the last writer activity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_ns: Option<u64>,
    /// Pause-writer: resume to first fresh frame.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery_ns: Option<u64>,
    /// Pause-writer: how far behind its scheduled tick the detecting poll ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitor_late_ns: Option<u64>,
}

impl TrialReport {
    fn check(&mut self, ok: bool, failure: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(failure());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: FaultConfig,
    pub passed: u32,
    pub failed: u32,
    pub trials: Vec<TrialReport>,
}

impl ScenarioReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0 && self.passed == self.config.trials
    }
}

pub fn run_fault_scenario(cfg: &FaultConfig, launcher: &Launcher) -> Result<ScenarioReport> {
    cfg.validate()?;
    tighten_timer_slack();
    let dir = tempfile::tempdir()?;
    let trials = match cfg.scenario {
        Scenario::PauseWriter => pause_writer(cfg, launcher, dir.path())?,
        _ => (0..cfg.trials)
            .map(|t| {
                let mut report = match cfg.scenario {
                    Scenario::KillWriter => kill_writer(cfg, launcher, dir.path(), t),
                    _ => kill_reader(cfg, launcher, dir.path(), t),
                }
                .unwrap_or_else(|e| TrialReport {
                    failures: vec![e.to_string()],
                    ..TrialReport::default()
                });
                report.trial = t;
                report.passed = report.failures.is_empty();
                let _ = destroy_region(&cfg.stream);
                report
            })
            .collect(),
    };
    let passed = trials.iter().filter(|t| t.passed).count() as u32;
    Ok(ScenarioReport {
        config: cfg.clone(),
        passed,
        failed: trials.len() as u32 - passed,
        trials,
    })
}

fn spec(cfg: &FaultConfig, role: Role, out: &Path) -> WorkerSpec {
    let mut s = WorkerSpec::new(role, &cfg.stream, cfg.workload, out.to_owned());
    s.poll_interval_ns = cfg.poll_interval_ns;
    s.deadline_ns = cfg.deadline_ns;
    s
}

fn read_log<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn fresh_region(cfg: &FaultConfig) -> Result<()> {
    destroy_region(&cfg.stream)?;
    create_region(&cfg.stream, cfg.workload.frame_kind())?;
    Ok(())
}

fn spawn_readers(
    cfg: &FaultConfig,
    launcher: &Launcher,
    dir: &Path,
    trial: u32,
    stop_at_seq: u64,
) -> Result<(Vec<WorkerProcess>, Vec<std::path::PathBuf>)> {
    let mut procs = Vec::new();
    let mut outs = Vec::new();
    for i in 0..cfg.readers {
        let out = dir.join(format!("t{trial}_reader{i}.json"));
        let mut s = spec(cfg, Role::SimReader, &out);
        s.reader_id = i;
        s.stop_at_seq = stop_at_seq;
        s.idle_timeout_ns = 60_000_000_000;
        procs.push(launcher.spawn(&s)?);
        outs.push(out);
    }
    for p in &mut procs {
        p.expect("READY", STARTUP_TIMEOUT)?;
    }
    Ok((procs, outs))
}

/// Writer killed mid-stream and restarted after a gap. Readers must stay
/// up, report the writer stale during the gap and then continue with the
/// next sequence number.
fn kill_writer(cfg: &FaultConfig, launcher: &Launcher, dir: &Path, trial: u32) -> Result<TrialReport> {
    let mut report = TrialReport::default();
    fresh_region(cfg)?;
    let (mut readers, outs) = spawn_readers(cfg, launcher, dir, trial, 0)?;

    let first_out = dir.join(format!("t{trial}_writer_a.json"));
    let mut first = launcher.spawn(&spec(cfg, Role::SimWriter, &first_out))?;
    first.expect("READY", STARTUP_TIMEOUT)?;
    std::thread::sleep(Duration::from_nanos(cfg.run_ns));
    first.kill()?;
    let killed_at = attach_region(&cfg.stream, AccessMode::ReadOnly)?.latest_seq();
    report.killed_at_seq = Some(killed_at);
    report.check(killed_at > 0, || "writer published nothing before the kill".into());

    std::thread::sleep(Duration::from_nanos(cfg.gap_ns));
    let second_out = dir.join(format!("t{trial}_writer_b.json"));
    let mut second = launcher.spawn(&spec(cfg, Role::SimWriter, &second_out))?;
    let resumed: u64 = second
        .expect("READY", STARTUP_TIMEOUT)?
        .parse()
        .map_err(|_| Error::Config("writer printed a malformed READY line".into()))?;
    report.resumed_at_seq = Some(resumed);
    report.check(resumed == killed_at + 1, || {
        format!("restarted writer began at {resumed}, expected {}", killed_at + 1)
    });
    std::thread::sleep(Duration::from_nanos(cfg.run_ns));
    second.close_stdin();
    second.finish(Duration::from_secs(10))?;
    let second_log: WriterLog = read_log(&second_out)?;
    report.check(
        second_log.publishes.first().map(|p| p.seq) == Some(killed_at + 1),
        || "restarted writer's first publish did not continue the sequence".into(),
    );

    for (i, r) in readers.iter_mut().enumerate() {
        r.close_stdin();
        if let Err(e) = r.finish(Duration::from_secs(10)) {
            report.failures.push(format!("reader {i}: {e}"));
        }
    }
    for (i, out) in outs.iter().enumerate() {
        let log: ReaderLog = match read_log(out) {
            Ok(l) => l,
            Err(e) => {
                report.failures.push(format!("reader {i} left no log: {e}"));
                continue;
            }
        };
        report.check(log.non_monotonic == 0 && log.torn == 0, || {
            format!("reader {i}: {} non-monotonic, {} torn", log.non_monotonic, log.torn)
        });
        let stale = log.stale_events.iter().find(|e| e.after_seq == killed_at);
        report.check(stale.is_some(), || {
            format!("reader {i} never reported the writer stale after seq {killed_at}")
        });
        let next = log.arrivals.iter().find(|a| a.seq > killed_at);
        report.check(next.is_some_and(|a| a.seq == killed_at + 1), || {
            format!(
                "reader {i} resumed at {:?}, expected {}",
                next.map(|a| a.seq),
                killed_at + 1
            )
        });
        if let (Some(s), Some(a)) = (stale, next) {
            report.check(s.detected_ns < a.recv_ts_ns, || {
                format!("reader {i} saw the restart before reporting staleness")
            });
        }
    }
    Ok(report)
}

/// One of several readers killed mid-run. The writer and every survivor
/// must carry on as if nothing happened.
fn kill_reader(cfg: &FaultConfig, launcher: &Launcher, dir: &Path, trial: u32) -> Result<TrialReport> {
    let mut report = TrialReport::default();
    let interval = cfg.workload.interval_ns();
    let frames = (2 * cfg.run_ns / interval).max(4);
    fresh_region(cfg)?;
    let (mut readers, outs) = spawn_readers(cfg, launcher, dir, trial, frames)?;
    let writer_out = dir.join(format!("t{trial}_writer.json"));
    let mut ws = spec(cfg, Role::SimWriter, &writer_out);
    ws.frames = frames;
    let mut writer = launcher.spawn(&ws)?;
    writer.expect("READY", STARTUP_TIMEOUT)?;

    std::thread::sleep(Duration::from_nanos(frames / 2 * interval));
    let killed_ns = CLOCK.now_ns();
    readers[0].kill()?;

    writer.finish(Duration::from_nanos(frames * interval) + Duration::from_secs(10))?;
    let log: WriterLog = read_log(&writer_out)?;
    report.published = Some(log.publishes.len() as u64);
    report.check(log.publishes.len() as u64 == frames, || {
        format!("writer published {} of {frames}", log.publishes.len())
    });

    let publish_ts: std::collections::HashMap<u64, u64> =
        log.publishes.iter().map(|p| (p.seq, p.publish_ts_ns)).collect();
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for (i, (r, out)) in readers.iter_mut().zip(&outs).enumerate().skip(1) {
        if let Err(e) = r.finish(Duration::from_secs(10)) {
            report.failures.push(format!("survivor {i}: {e}"));
            continue;
        }
        let rl: ReaderLog = read_log(out)?;
        let delivered = rl.arrivals.len() as u64;
        report.survivors_delivered.push(delivered);
        report.check(delivered == frames && rl.non_monotonic == 0 && rl.torn == 0, || {
            format!(
                "survivor {i}: delivered {delivered} of {frames}, {} non-monotonic, {} torn",
                rl.non_monotonic, rl.torn
            )
        });
        for a in &rl.arrivals {
            if let Some(&p) = publish_ts.get(&a.seq) {
                let lat = a.recv_ts_ns.saturating_sub(p) as f64;
                if a.recv_ts_ns < killed_ns {
                    before.push(lat);
                } else {
                    after.push(lat);
                }
            }
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    report.survivor_mean_ns = Some((mean(&before), mean(&after)));
    Ok(report)
}

/// Suspends the writer past the liveness deadline, `trials` times on one
/// stream. An in-process reader polling on a fixed grid must flip to stale
/// within deadline + one poll interval of the writer's last activity, and
/// see fresh frames again after the writer resumes.
fn pause_writer(cfg: &FaultConfig, launcher: &Launcher, dir: &Path) -> Result<Vec<TrialReport>> {
    fresh_region(cfg)?;
    let writer_out = dir.join("pause_writer.json");
    let mut writer = launcher.spawn(&spec(cfg, Role::SimWriter, &writer_out))?;
    writer.expect("READY", STARTUP_TIMEOUT)?;
    let kind = cfg.workload.frame_kind();
    let mut reader = Reader::init(&cfg.stream, kind, cfg.deadline_ns)?;
    let mut buf = vec![0u8; reader.buffer_len()];
    let poll = Duration::from_nanos(cfg.poll_interval_ns);
    let spin = (poll / 4).min(Duration::from_micros(300));
    let settle = Duration::from_nanos(4 * cfg.workload.interval_ns()) + Duration::from_secs(1);

    let wait_fresh = |reader: &mut Reader, buf: &mut [u8], within: Duration| -> Result<Option<Instant>> {
        let deadline = Instant::now() + within;
        while Instant::now() < deadline {
            if let ReadOutcome::Fresh { .. } = reader.poll(buf)? {
                return Ok(Some(Instant::now()));
            }
            std::thread::sleep(poll);
        }
        Ok(None)
    };

    let mut trials = Vec::new();
    let mut result = Ok(());
    for trial in 0..cfg.trials {
        let mut report = TrialReport {
            trial,
            ..TrialReport::default()
        };
        if wait_fresh(&mut reader, &mut buf, settle)?.is_none() {
            report.failures.push("no fresh frame before the pause".into());
        }
        if let Err(e) = writer.signal(libc::SIGSTOP) {
            result = Err(e);
            break;
        }
        let stopped = Instant::now();
        let resume_at = stopped + Duration::from_nanos(cfg.pause_ns);
        let mut tick = stopped;
        let mut detected = None;
        let realtime = RealtimeGuard::acquire();
        while tick < resume_at {
            tick += poll;
            spin_until(tick, spin);
            // The poll that first reports stale was issued at `issued`; its
            // own check ran somewhere between the two stamps.
            let late = Instant::now().saturating_duration_since(tick);
            let issued = CLOCK.now_ns();
            if let ReadOutcome::WriterStale { last_activity_ns } = reader.poll(&mut buf)? {
                let returned = CLOCK.now_ns();
                detected = Some((
                    issued.saturating_sub(last_activity_ns),
                    returned.saturating_sub(last_activity_ns),
                ));
                report.monitor_late_ns = Some(late.as_nanos() as u64);
                break;
            }
        }
        drop(realtime);
        sleep_until(resume_at);
        if let Err(e) = writer.signal(libc::SIGCONT) {
            result = Err(e);
            break;
        }
        let resumed = Instant::now();
        report.detection_ns = detected.map(|(d, _)| d);
        match detected {
            None => report.failures.push("staleness never detected during the pause".into()),
            Some((d, upper)) => {
                report.check(upper > cfg.deadline_ns, || {
                    format!("reported stale {upper} ns after last activity, before the deadline")
                });
                let late = report.monitor_late_ns.unwrap_or(0);
                report.check(d <= cfg.deadline_ns + cfg.poll_interval_ns, || {
                    format!(
                        "detected {d} ns after last activity, limit {}; the detecting poll ran {late} ns behind schedule",
                        cfg.deadline_ns + cfg.poll_interval_ns
                    )
                });
            }
        }
        match wait_fresh(&mut reader, &mut buf, settle)? {
            Some(t) => {
                report.recovery_ns = Some((t - resumed).as_nanos() as u64);
                report.check(reader.check_liveness() == Liveness::Alive, || {
                    "writer still stale after a fresh frame".into()
                });
            }
            None => report.failures.push("no fresh frame after resuming".into()),
        }
        report.passed = report.failures.is_empty();
        trials.push(report);
    }
    writer.close_stdin();
    let finished = writer.finish(Duration::from_secs(10));
    drop(reader);
    destroy_region(&cfg.stream)?;
    result?;
    finished?;
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = FaultConfig::new(Scenario::KillReader);
        assert_eq!(c.readers, 10);
        c.validate().unwrap();
        let mut c = FaultConfig::new(Scenario::PauseWriter);
        c.pause_ns = c.deadline_ns;
        assert!(c.validate().is_err());
        let mut c = FaultConfig::new(Scenario::KillWriter);
        c.gap_ns = 100;
        assert!(c.validate().is_err());
    }

    #[test]
    fn scenario_names() {
        assert_eq!(serde_json::to_string(&Scenario::KillWriter).unwrap(), "\"kill-writer\"");
    }
}
