// SPDX-License-Identifier: Apache-2.0

//! Latency benchmark harness for the `simshm` transport.
//!
//! A run spawns one writer process and N reader processes (all hosted by the
//! `bench` binary), publishes synthetic frames at a sensor rate, and turns
//! the writer's pre-publish stamps and the readers' receive stamps into
//! latency distributions. The same harness drives the copy+serialize
//! baseline so the two transports can be compared on one host.

pub mod config;
mod error;
pub mod faults;
pub mod model;
pub mod pace;
pub mod process;
pub mod report;
pub mod run;
pub mod stats;
pub mod worker;

pub use config::{BenchConfig, Transport, Workload};
pub use error::{Error, Result};
pub use faults::{run_fault_scenario, FaultConfig, Scenario, ScenarioReport};
pub use model::{handoff_model, measure_copy_bandwidth};
pub use process::Launcher;
pub use report::{emit_report, BenchReport, Format, LatencySample};
pub use run::run_benchmark;
pub use stats::{compute_stats, LatencyStats};
