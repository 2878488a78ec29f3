// SPDX-License-Identifier: Apache-2.0

//! The bench's child processes. Every writer, reader, publisher and
//! subscriber runs as `bench __worker --spec <json>` and leaves its record
//! in a JSON log for the parent to merge.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use simshm::baseline::{BaselinePublisher, BaselineSubscriber};
use simshm::frames::{fill_image, fill_pointcloud};
use simshm::{
    validate_frame_sampled, ClockSource, Error as TransportError, FrameKind, PointCloudFrame, PointXYZ,
    ReadOutcome, Reader, Writer,
};

use crate::config::Workload;
use crate::error::{Error, Result};
use crate::pace::{elevate_priority, sleep_until, tighten_timer_slack, Pacer};

const CLOCK: ClockSource = ClockSource::Realtime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    SimWriter,
    SimReader,
    BaselinePublisher,
    BaselineSubscriber,
}

impl Role {
    pub fn is_writer(self) -> bool {
        matches!(self, Role::SimWriter | Role::BaselinePublisher)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSpec {
    pub role: Role,
    pub stream: String,
    pub workload: Workload,
    /// Writers: frames to publish, 0 for "until stdin closes".
    pub frames: u64,
    /// Publisher: subscribers to wait for before the first frame.
    pub subscribers: u32,
    pub reader_id: u32,
    pub poll_interval_ns: u64,
    pub reader_work_ns: u64,
    /// Liveness deadline for sim readers.
    pub deadline_ns: u64,
    /// Readers stop once they deliver this sequence number; 0 disables.
    pub stop_at_seq: u64,
    /// Readers give up after this long without a fresh frame.
    pub idle_timeout_ns: u64,
    /// Payload validation granule in bytes; 1 checks every element, 0 skips
    /// validation.
    pub validate_granule: u32,
    pub elevate_priority: bool,
    pub out: PathBuf,
}

impl WorkerSpec {
    pub fn new(role: Role, stream: &str, workload: Workload, out: PathBuf) -> Self {
        WorkerSpec {
            role,
            stream: stream.to_owned(),
            workload,
            frames: 0,
            subscribers: 0,
            reader_id: 0,
            poll_interval_ns: crate::config::DEFAULT_POLL_INTERVAL_NS,
            reader_work_ns: 0,
            deadline_ns: 500_000_000,
            stop_at_seq: 0,
            idle_timeout_ns: 30_000_000_000,
            validate_granule: crate::config::DEFAULT_VALIDATE_GRANULE,
            elevate_priority: false,
            out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Publish {
    pub seq: u64,
    pub publish_ts_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WriterLog {
    pub publishes: Vec<Publish>,
    /// Baseline only: frames some subscriber never received.
    pub drops: u64,
    pub priority_elevated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub seq: u64,
    pub recv_ts_ns: u64,
}

/// A transition from alive to stale as one reader saw it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleEvent {
    /// Last sequence delivered before the writer went quiet.
    pub after_seq: u64,
    pub detected_ns: u64,
    pub last_activity_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReaderLog {
    pub reader_id: u32,
    pub arrivals: Vec<Arrival>,
    /// Fresh frames whose payload failed validation.
    pub torn: u64,
    /// Fresh frames whose sequence did not exceed the previous one.
    pub non_monotonic: u64,
    pub contended: u64,
    pub integrity_errors: u64,
    pub stale_events: Vec<StaleEvent>,
    pub priority_elevated: bool,
    /// Why the reader stopped.
    pub end: String,
}

/// Entry point of `bench __worker`.
pub fn run(spec: &WorkerSpec) -> Result<()> {
    tighten_timer_slack();
    let elevated = spec.elevate_priority && elevate_priority();
    let stop = watch_stdin();
    match spec.role {
        Role::SimWriter | Role::BaselinePublisher => {
            let mut log = publish_loop(spec, &stop)?;
            log.priority_elevated = elevated;
            write_log(spec, &log)
        }
        Role::SimReader | Role::BaselineSubscriber => {
            let mut log = if spec.role == Role::SimReader {
                sim_read_loop(spec, &stop)?
            } else {
                baseline_read_loop(spec)?
            };
            log.reader_id = spec.reader_id;
            log.priority_elevated = elevated;
            write_log(spec, &log)
        }
    }?;
    say("DONE");
    Ok(())
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn write_log<T: Serialize>(spec: &WorkerSpec, log: &T) -> Result<()> {
    let file = std::fs::File::create(&spec.out)?;
    serde_json::to_writer(std::io::BufWriter::new(file), log)?;
    Ok(())
}

/// Flag raised once the parent closes our stdin.
fn watch_stdin() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let raised = Arc::clone(&flag);
    std::thread::spawn(move || {
        let stdin = std::io::stdin();
        let mut line = String::new();
        while matches!(stdin.lock().read_line(&mut line), Ok(n) if n > 0) {
            line.clear();
        }
        raised.store(true, Ordering::Release);
    });
    flag
}

/// Reusable payload buffer holding the generated frame for one sequence.
pub struct FrameSource {
    kind: FrameKind,
    cloud: PointCloudFrame,
    pixels: Vec<u8>,
}

impl FrameSource {
    pub fn new(kind: FrameKind) -> Self {
        let (points, pixels) = match kind {
            FrameKind::PointCloud { max_points } => {
                (vec![PointXYZ::default(); max_points as usize], Vec::new())
            }
            FrameKind::Image(meta) => (Vec::new(), vec![0u8; meta.byte_size() as usize]),
        };
        FrameSource {
            kind,
            cloud: PointCloudFrame { points },
            pixels,
        }
    }

    /// Generates frame `seq` and returns its bytes and effective length.
    pub fn fill(&mut self, seq: u64) -> (&[u8], usize) {
        match self.kind {
            FrameKind::PointCloud { .. } => {
                fill_pointcloud(seq, &mut self.cloud.points);
                (self.cloud.as_bytes(), self.cloud.count())
            }
            FrameKind::Image(meta) => {
                fill_image(seq, &meta, &mut self.pixels);
                (&self.pixels, self.pixels.len())
            }
        }
    }
}

enum Sink {
    Sim(Writer),
    Baseline(BaselinePublisher),
}

fn publish_loop(spec: &WorkerSpec, stop: &AtomicBool) -> Result<WriterLog> {
    let kind = spec.workload.frame_kind();
    let mut sink = match spec.role {
        Role::SimWriter => {
            let w = Writer::init(&spec.stream, kind)?;
            say(&format!("READY {}", w.next_seq()));
            Sink::Sim(w)
        }
        _ => {
            let mut p = BaselinePublisher::bind(&spec.stream)?;
            say("READY 1");
            p.accept_subscribers(spec.subscribers as usize, Duration::from_secs(30))?;
            Sink::Baseline(p)
        }
    };
    let mut source = FrameSource::new(kind);
    let mut log = WriterLog::default();
    let mut pacer = Pacer::new(Duration::from_nanos(spec.workload.interval_ns()));
    let mut next_seq = match &sink {
        Sink::Sim(w) => w.next_seq(),
        Sink::Baseline(_) => 1,
    };
    let mut published = 0;
    while (spec.frames == 0 || published < spec.frames) && !stop.load(Ordering::Acquire) {
        // Generate after the tick: on a busy host, synthesizing the next
        // frame right after a publish would compete with the readers.
        pacer.wait();
        let (payload, len) = source.fill(next_seq);
        let ts = CLOCK.now_ns();
        let seq = match &mut sink {
            Sink::Sim(w) => w.write_frame(payload, len)?,
            Sink::Baseline(p) => {
                p.publish(next_seq, ts, payload)?;
                next_seq
            }
        };
        log.publishes.push(Publish {
            seq,
            publish_ts_ns: ts,
        });
        next_seq = seq + 1;
        published += 1;
    }
    if let Sink::Baseline(p) = sink {
        log.drops = p.drops();
        p.finish();
    }
    Ok(log)
}

struct Tracker<'a> {
    spec: &'a WorkerSpec,
    kind: FrameKind,
    log: ReaderLog,
    last_seq: u64,
}

impl Tracker<'_> {
    /// Records a delivery; returns true once the reader should stop.
    fn deliver(&mut self, seq: u64, recv_ts_ns: u64, payload: &[u8], effective_len: usize) -> bool {
        self.log.arrivals.push(Arrival { seq, recv_ts_ns });
        if seq <= self.last_seq {
            self.log.non_monotonic += 1;
        }
        self.last_seq = seq;
        let granule = self.spec.validate_granule as usize;
        if granule > 0 && !validate_frame_sampled(&self.kind, seq, payload, effective_len, granule) {
            self.log.torn += 1;
        }
        self.spec.stop_at_seq != 0 && seq >= self.spec.stop_at_seq
    }

    fn work(&self, received: Instant) {
        if self.spec.reader_work_ns > 0 {
            sleep_until(received + Duration::from_nanos(self.spec.reader_work_ns));
        }
    }
}

fn sim_read_loop(spec: &WorkerSpec, stop: &AtomicBool) -> Result<ReaderLog> {
    let kind = spec.workload.frame_kind();
    let mut reader = Reader::init(&spec.stream, kind, spec.deadline_ns)?;
    let mut buf = vec![0u8; reader.buffer_len()];
    let poll = Duration::from_nanos(spec.poll_interval_ns);
    let idle = Duration::from_nanos(spec.idle_timeout_ns);
    let mut t = Tracker {
        spec,
        kind,
        log: ReaderLog::default(),
        last_seq: 0,
    };
    let mut stale = false;
    let mut last_fresh = Instant::now();
    say("READY");
    t.log.end = loop {
        if stop.load(Ordering::Acquire) {
            break "stdin closed";
        }
        match reader.poll(&mut buf) {
            Ok(ReadOutcome::Fresh {
                seq, effective_len, ..
            }) => {
                let recv = CLOCK.now_ns();
                let received = Instant::now();
                last_fresh = received;
                stale = false;
                if t.deliver(seq, recv, &buf, effective_len as usize) {
                    break "reached last frame";
                }
                t.work(received);
                continue;
            }
            Ok(ReadOutcome::Contended) => {
                t.log.contended += 1;
                continue;
            }
            Ok(ReadOutcome::WriterStale { last_activity_ns }) => {
                if !stale {
                    stale = true;
                    t.log.stale_events.push(StaleEvent {
                        after_seq: t.last_seq,
                        detected_ns: CLOCK.now_ns(),
                        last_activity_ns,
                    });
                }
            }
            Ok(ReadOutcome::NoNewData) => {}
            Err(TransportError::Integrity { .. }) => t.log.integrity_errors += 1,
            Err(e) => return Err(e.into()),
        }
        if last_fresh.elapsed() > idle {
            break "idle timeout";
        }
        std::thread::sleep(poll);
    }
    .to_owned();
    Ok(t.log)
}

fn connect_with_retry(stream: &str, within: Duration) -> Result<BaselineSubscriber> {
    let deadline = Instant::now() + within;
    loop {
        match BaselineSubscriber::connect(stream) {
            Ok(s) => return Ok(s),
            Err(TransportError::NotFound(_)) if Instant::now() < deadline => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn baseline_read_loop(spec: &WorkerSpec) -> Result<ReaderLog> {
    let kind = spec.workload.frame_kind();
    let mut sub = connect_with_retry(&spec.stream, Duration::from_secs(10))?;
    let mut buf = vec![0u8; kind.capacity_bytes() as usize];
    let mut t = Tracker {
        spec,
        kind,
        log: ReaderLog::default(),
        last_seq: 0,
    };
    let elem = kind.element_bytes() as usize;
    say("READY");
    t.log.end = loop {
        match sub.receive(&mut buf) {
            Ok(r) => {
                let recv = CLOCK.now_ns();
                let received = Instant::now();
                // Keep draining after the last frame so the publisher's
                // sender never sees a closed socket.
                t.deliver(r.seq, recv, &buf, r.effective_len / elem);
                t.work(received);
            }
            Err(TransportError::EndOfStream) => break "end of stream",
            Err(TransportError::Integrity { .. } | TransportError::Parse(_)) => {
                t.log.integrity_errors += 1;
                break "bad record";
            }
            Err(e) => return Err(e.into()),
        }
    }
    .to_owned();
    Ok(t.log)
}

/// Decodes the spec argument of `bench __worker`.
pub fn parse_spec(text: &str) -> Result<WorkerSpec> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("worker spec: {e}")))
}
