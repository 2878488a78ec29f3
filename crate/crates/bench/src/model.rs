// SPDX-License-Identifier: Apache-2.0

//! Handoff cost model and the host measurements that feed it.
//!
//! A publish costs one bulk copy on the writer side, a constant publish
//! step, and one bulk copy on the reader side:
//! `handoff = bytes / writer_bandwidth + publish + bytes / reader_bandwidth`.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use simshm::{destroy_region, ClockSource, FrameKind, Writer};

use crate::error::{Error, Result};

/// Predicted handoff time in nanoseconds. Bandwidths in bytes per second.
pub fn handoff_model(
    frame_bytes: u64,
    bw_writer: f64,
    bw_reader: f64,
    t_publish_ns: f64,
) -> Result<f64> {
    for (side, bw) in [("writer", bw_writer), ("reader", bw_reader)] {
        if !(bw.is_finite() && bw > 0.0) {
            return Err(Error::Model(format!("{side} bandwidth must be positive, got {bw}")));
        }
    }
    let b = frame_bytes as f64;
    Ok(b / bw_writer * 1e9 + t_publish_ns + b / bw_reader * 1e9)
}

const WARMUP_ITERATIONS: usize = 10;
const MIN_ITERATIONS: usize = 100;

/// Median throughput, bytes per second, of `block_bytes` bulk copies
/// between two heap blocks. Blocks smaller than a page are rounded up.
pub fn measure_copy_bandwidth(block_bytes: usize) -> f64 {
    measure_copy_bandwidth_iters(block_bytes, MIN_ITERATIONS)
}

pub fn measure_copy_bandwidth_iters(block_bytes: usize, iterations: usize) -> f64 {
    let len = block_bytes.max(simshm::region::page_size());
    let src: Vec<u8> = (0..len).map(|i| (i as u8).wrapping_mul(31)).collect();
    let mut dst = vec![0u8; len];
    for _ in 0..WARMUP_ITERATIONS {
        dst.copy_from_slice(black_box(&src));
    }
    let mut rates: Vec<f64> = (0..iterations.max(MIN_ITERATIONS))
        .map(|_| {
            let t = Instant::now();
            dst.copy_from_slice(black_box(&src));
            black_box(&mut dst);
            len as f64 / t.elapsed().as_secs_f64().max(1e-9)
        })
        .collect();
    rates.sort_by(f64::total_cmp);
    rates[rates.len() / 2]
}

/// Median cost of the publish step alone: an empty frame through a
/// throwaway region, so no payload is copied.
pub fn measure_publish_cost(iterations: usize) -> Result<f64> {
    let name = format!("/bench_pubcost_{}", std::process::id());
    destroy_region(&name)?;
    let mut writer = Writer::init(&name, FrameKind::PointCloud { max_points: 1 })?;
    let mut costs = Vec::with_capacity(iterations.max(1));
    for _ in 0..iterations.max(1) {
        let t = Instant::now();
        writer.write_frame(&[], 0)?;
        costs.push(t.elapsed().as_nanos() as f64);
    }
    drop(writer);
    destroy_region(&name)?;
    costs.sort_by(f64::total_cmp);
    Ok(costs[costs.len() / 2])
}

/// Mean cost of one timestamp read on `clock`.
pub fn measure_stamp_overhead(clock: ClockSource, iterations: usize) -> f64 {
    let iterations = iterations.max(1);
    let t = Instant::now();
    let mut acc = 0u64;
    for _ in 0..iterations {
        acc = acc.wrapping_add(black_box(clock.now_ns()));
    }
    black_box(acc);
    t.elapsed().as_nanos() as f64 / iterations as f64
}

/// Every host measurement behind one model prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub frame_bytes: u64,
    pub bw_writer_bytes_per_s: f64,
    pub bw_reader_bytes_per_s: f64,
    pub publish_ns: f64,
    pub predicted_ns: f64,
}

/// Measures writer and reader copy bandwidth at the frame size (two
/// independent measurements) and the publish cost, then evaluates the model.
pub fn estimate(frame_bytes: u64) -> Result<ModelEstimate> {
    let block = frame_bytes as usize;
    let bw_writer = measure_copy_bandwidth(block);
    let bw_reader = measure_copy_bandwidth(block);
    let publish_ns = measure_publish_cost(1000)?;
    Ok(ModelEstimate {
        frame_bytes,
        bw_writer_bytes_per_s: bw_writer,
        bw_reader_bytes_per_s: bw_reader,
        publish_ns,
        predicted_ns: handoff_model(frame_bytes, bw_writer, bw_reader, publish_ns)?,
    })
}
