// SPDX-License-Identifier: Apache-2.0

//! Benchmark configuration.

use serde::{Deserialize, Serialize};
use simshm::{FrameKind, ImageMeta};

use crate::error::{Error, Result};

pub const DEFAULT_RUNS: u32 = 5;
pub const DEFAULT_FRAMES_PER_RUN: u64 = 1000;
pub const DEFAULT_WARMUP_DISCARD: u64 = 100;
pub const DEFAULT_POLL_INTERVAL_NS: u64 = 50_000;
/// Readers check one payload element per cache line.
pub const DEFAULT_VALIDATE_GRANULE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Shared-memory double buffer.
    Sim,
    /// Copy+serialize baseline over a local stream socket.
    Baseline,
}

impl Transport {
    pub fn label(self) -> &'static str {
        match self {
            Transport::Sim => "sim",
            Transport::Baseline => "copy+serialize baseline",
        }
    }
}

/// A synthetic sensor: what each frame looks like and how often it comes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sensor", rename_all = "snake_case")]
pub enum Workload {
    Lidar {
        points: u32,
        rate_hz: f64,
    },
    Camera {
        width: u32,
        height: u32,
        channels: u32,
        rate_hz: f64,
    },
}

impl Workload {
    /// 2,160 points per frame at 20 Hz.
    pub fn lidar() -> Self {
        Workload::Lidar {
            points: 2160,
            rate_hz: 20.0,
        }
    }

    /// 640×480 RGB at 30 frames per second.
    pub fn camera() -> Self {
        Workload::Camera {
            width: 640,
            height: 480,
            channels: 3,
            rate_hz: 30.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Workload::Lidar { .. } => "lidar",
            Workload::Camera { .. } => "camera",
        }
    }

    pub fn rate_hz(&self) -> f64 {
        match *self {
            Workload::Lidar { rate_hz, .. } | Workload::Camera { rate_hz, .. } => rate_hz,
        }
    }

    pub fn with_rate(mut self, rate: f64) -> Self {
        match &mut self {
            Workload::Lidar { rate_hz, .. } | Workload::Camera { rate_hz, .. } => *rate_hz = rate,
        }
        self
    }

    pub fn frame_kind(&self) -> FrameKind {
        match *self {
            Workload::Lidar { points, .. } => FrameKind::PointCloud { max_points: points },
            Workload::Camera {
                width,
                height,
                channels,
                ..
            } => FrameKind::Image(ImageMeta::dense(width, height, channels)),
        }
    }

    /// Payload bytes of every generated frame; frames always fill capacity.
    pub fn frame_bytes(&self) -> u64 {
        self.frame_kind().capacity_bytes()
    }

    pub fn interval_ns(&self) -> u64 {
        (1e9 / self.rate_hz()).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let rate = self.rate_hz();
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::Config(format!("rate must be positive, got {rate}")));
        }
        self.frame_kind()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub transport: Transport,
    pub workload: Workload,
    pub readers: u32,
    pub runs: u32,
    pub frames_per_run: u64,
    pub warmup_discard: u64,
    pub poll_interval_ns: u64,
    /// Time a reader spends on each delivered frame before polling again.
    /// Zero for an unloaded reader.
    pub reader_work_ns: u64,
    /// Readers validate one element per this many payload bytes; 1 checks
    /// everything, 0 nothing.
    pub validate_granule: u32,
    /// Ask for `SCHED_FIFO` priority 99 in every bench process. Best effort.
    pub elevate_priority: bool,
    /// Stream name; each run recreates it.
    pub stream: String,
}

impl BenchConfig {
    pub fn new(transport: Transport, workload: Workload, readers: u32) -> Self {
        BenchConfig {
            transport,
            workload,
            readers,
            runs: DEFAULT_RUNS,
            frames_per_run: DEFAULT_FRAMES_PER_RUN,
            warmup_discard: DEFAULT_WARMUP_DISCARD,
            poll_interval_ns: DEFAULT_POLL_INTERVAL_NS,
            reader_work_ns: 0,
            validate_granule: DEFAULT_VALIDATE_GRANULE,
            elevate_priority: false,
            stream: default_stream(&workload),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_run <= self.warmup_discard {
            return Err(Error::Config(format!(
                "frames per run ({}) must exceed the warmup discard ({})",
                self.frames_per_run, self.warmup_discard
            )));
        }
        if self.readers < 1 {
            return Err(Error::Config("at least one reader is required".into()));
        }
        if self.runs < 1 {
            return Err(Error::Config("at least one run is required".into()));
        }
        if self.poll_interval_ns == 0 {
            return Err(Error::Config("poll interval must be positive".into()));
        }
        simshm::region::validate_name(&self.stream).map_err(|e| Error::Config(e.to_string()))?;
        self.workload.validate()
    }
}

/// Per-process stream name so concurrent invocations do not collide.
pub fn default_stream(workload: &Workload) -> String {
    format!("/bench_{}_{}", workload.name(), std::process::id())
}
