// SPDX-License-Identifier: Apache-2.0

//! Benchmark report structure and its JSON and CSV forms.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use simshm::DiagnosticsSnapshot;

use crate::config::BenchConfig;
use crate::error::Result;
use crate::stats::{Interval, LatencyStats};

/// One retained latency sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub run: u32,
    pub reader_id: u32,
    pub seq: u64,
    pub publish_ts_ns: u64,
    pub recv_ts_ns: u64,
    pub latency_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub last_seq: u64,
    pub heartbeat_ns: u64,
    pub max_interpublish_ns: u64,
    pub checksum_enabled: bool,
    pub drops_observed: u64,
    pub delivery_ratio: f64,
}

impl From<DiagnosticsSnapshot> for Diagnostics {
    fn from(s: DiagnosticsSnapshot) -> Self {
        Diagnostics {
            last_seq: s.last_seq,
            heartbeat_ns: s.heartbeat_ns,
            max_interpublish_ns: s.max_interpublish_ns,
            checksum_enabled: s.checksum_enabled,
            drops_observed: s.drops_observed,
            delivery_ratio: s.delivery_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderRun {
    pub reader_id: u32,
    pub stats: Option<LatencyStats>,
    /// Distinct frames delivered after the warmup.
    pub delivered: u64,
    pub drops_observed: u64,
    pub delivery_ratio: f64,
    pub non_monotonic: u64,
    pub torn: u64,
    pub contended: u64,
    pub integrity_errors: u64,
    pub negative_latency: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: u32,
    pub valid: bool,
    pub flags: Vec<String>,
    /// Frames the writer published, warmup included.
    pub published: u64,
    pub stats: Option<LatencyStats>,
    pub readers: Vec<ReaderRun>,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheck {
    pub frame_bytes: u64,
    pub bw_writer_bytes_per_s: f64,
    pub bw_reader_bytes_per_s: f64,
    pub publish_ns: f64,
    pub predicted_ns: f64,
    pub measured_mean_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub page_size: usize,
    pub stamp_overhead_ns: f64,
    pub cpus: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub retained: u64,
    pub negative_latency: u64,
    pub non_monotonic: u64,
    pub torn: u64,
    pub contended: u64,
    pub integrity_errors: u64,
    pub invalid_runs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub transport_label: String,
    pub timestamp_point: String,
    pub clock: String,
    pub percentile_method: String,
    pub priority_elevated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub runs: Vec<RunReport>,
    pub pooled: LatencyStats,
    /// Per-reader stats pooled over runs.
    pub per_reader: Vec<LatencyStats>,
    pub ci95_mean: Interval,
    pub model: ModelCheck,
    pub host: HostInfo,
    pub totals: Totals,
    pub metadata: Metadata,
    #[serde(skip)]
    pub samples: Vec<LatencySample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    /// `csv` for paths ending in `.csv`, JSON otherwise.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Json,
        }
    }
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<BenchReport> {
        Ok(serde_json::from_str(text)?)
    }

    /// Raw samples, one row each, under a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        if self.samples.is_empty() {
            w.write_record(["run", "reader_id", "seq", "publish_ts_ns", "recv_ts_ns", "latency_ns"])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn emit_report(report: &BenchReport, format: Format, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        Format::Json => file.write_all(report.to_json()?.as_bytes())?,
        Format::Csv => report.write_csv(&mut file)?,
    }
    file.flush()?;
    Ok(())
}
