// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use simshm_bench::config::{BenchConfig, Transport, Workload};
use simshm_bench::faults::{run_fault_scenario, FaultConfig, Scenario};
use simshm_bench::model::{estimate, measure_copy_bandwidth, measure_stamp_overhead};
use simshm_bench::report::{emit_report, Format};
use simshm_bench::{run_benchmark, worker, Launcher, Result};

#[derive(Parser)]
#[command(name = "bench", about = "Latency benchmarks for the simshm transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sensor {
    Lidar,
    Camera,
}

#[derive(clap::Args)]
struct WorkloadArgs {
    #[arg(long, value_enum, default_value = "lidar")]
    workload: Sensor,
    /// Points per lidar frame.
    #[arg(long, default_value_t = 2160)]
    points: u32,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
    #[arg(long, default_value_t = 3)]
    channels: u32,
    /// Frames per second; defaults to 20 for lidar and 30 for camera.
    #[arg(long)]
    rate: Option<f64>,
}

impl WorkloadArgs {
    fn workload(&self) -> Workload {
        match self.workload {
            Sensor::Lidar => Workload::Lidar {
                points: self.points,
                rate_hz: self.rate.unwrap_or(20.0),
            },
            Sensor::Camera => Workload::Camera {
                width: self.width,
                height: self.height,
                channels: self.channels,
                rate_hz: self.rate.unwrap_or(30.0),
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Measure transport latency between one writer and K readers.
    Run {
        #[arg(long, value_enum, default_value = "sim")]
        transport: Transport,
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long, default_value_t = 1)]
        readers: u32,
        #[arg(long, default_value_t = 5)]
        runs: u32,
        #[arg(long, default_value_t = 1000)]
        frames: u64,
        #[arg(long, default_value_t = 100)]
        warmup: u64,
        #[arg(long = "poll-us", default_value_t = 50)]
        poll_us: u64,
        /// Per-frame reader work, to emulate a slow consumer.
        #[arg(long = "reader-work-us", default_value_t = 0)]
        reader_work_us: u64,
        /// Validate one payload element per this many bytes (1 = all, 0 = none).
        #[arg(long = "validate-granule", default_value_t = 64)]
        validate_granule: u32,
        /// Request SCHED_FIFO priority 99 (best effort).
        #[arg(long)]
        priority: bool,
        #[arg(long)]
        stream: Option<String>,
        /// Report path; format follows the extension unless --format is given.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Also write raw samples as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Inject a fault into a live stream and check the readers' reaction.
    Faults {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[command(flatten)]
        workload: WorkloadArgs,
        #[arg(long)]
        readers: Option<u32>,
        #[arg(long, default_value_t = 1)]
        trials: u32,
        #[arg(long = "deadline-ms", default_value_t = 500)]
        deadline_ms: u64,
        #[arg(long = "gap-ms", default_value_t = 2000)]
        gap_ms: u64,
        #[arg(long = "pause-ms", default_value_t = 600)]
        pause_ms: u64,
        #[arg(long = "poll-us", default_value_t = 1000)]
        poll_us: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure copy bandwidth and publish cost and predict the handoff time.
    Model {
        #[arg(long = "frame-bytes")]
        frame_bytes: u64,
    },
    #[command(name = "__worker", hide = true)]
    Worker {
        #[arg(long)]
        spec: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            transport,
            workload,
            readers,
            runs,
            frames,
            warmup,
            poll_us,
            reader_work_us,
            validate_granule,
            priority,
            stream,
            out,
            format,
            csv,
        } => {
            let mut cfg = BenchConfig::new(transport, workload.workload(), readers);
            cfg.runs = runs;
            cfg.frames_per_run = frames;
            cfg.warmup_discard = warmup;
            cfg.poll_interval_ns = poll_us * 1000;
            cfg.reader_work_ns = reader_work_us * 1000;
            cfg.validate_granule = validate_granule;
            cfg.elevate_priority = priority;
            if let Some(s) = stream {
                cfg.stream = s;
            }
            cfg.validate()?;
            let report = run_benchmark(&cfg, &Launcher::current()?)?;
            match out {
                Some(path) => {
                    let format = format.unwrap_or_else(|| Format::from_path(&path));
                    emit_report(&report, format, &path)?;
                }
                None => print!("{}", report.to_json()?),
            }
            if let Some(path) = csv {
                emit_report(&report, Format::Csv, &path)?;
            }
            let p = &report.pooled;
            eprintln!(
                "{} {} 1W->{}R: n={} mean={:.1}us p95={:.1}us p99={:.1}us max={:.1}us delivery={:.3}",
                transport.label(),
                cfg.workload.name(),
                readers,
                p.n,
                p.mean / 1e3,
                p.p95 as f64 / 1e3,
                p.p99 as f64 / 1e3,
                p.max as f64 / 1e3,
                p.delivery_ratio
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Faults {
            scenario,
            workload,
            readers,
            trials,
            deadline_ms,
            gap_ms,
            pause_ms,
            poll_us,
            out,
        } => {
            let mut cfg = FaultConfig::new(scenario);
            cfg.workload = workload.workload();
            cfg.readers = readers.unwrap_or(cfg.readers);
            cfg.trials = trials;
            cfg.deadline_ns = deadline_ms * 1_000_000;
            cfg.gap_ns = gap_ms * 1_000_000;
            cfg.pause_ns = pause_ms * 1_000_000;
            cfg.poll_interval_ns = poll_us * 1000;
            let report = run_fault_scenario(&cfg, &Launcher::current()?)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            eprintln!("{:?}: {}/{} trials passed", scenario, report.passed, cfg.trials);
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Model { frame_bytes } => {
            let m = estimate(frame_bytes)?;
            println!("frame_bytes: {}", m.frame_bytes);
            println!("bw_1mib_bytes_per_s: {:.0}", measure_copy_bandwidth(1 << 20));
            println!("bw_64mib_bytes_per_s: {:.0}", measure_copy_bandwidth(64 << 20));
            println!("bw_writer_bytes_per_s: {:.0}", m.bw_writer_bytes_per_s);
            println!("bw_reader_bytes_per_s: {:.0}", m.bw_reader_bytes_per_s);
            println!("publish_ns: {:.1}", m.publish_ns);
            println!(
                "stamp_overhead_ns: {:.1}",
                measure_stamp_overhead(simshm::ClockSource::Realtime, 100_000)
            );
            println!("predicted_handoff_ns: {:.1}", m.predicted_ns);
            Ok(ExitCode::SUCCESS)
        }
        Command::Worker { spec } => {
            worker::run(&worker::parse_spec(&spec)?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
