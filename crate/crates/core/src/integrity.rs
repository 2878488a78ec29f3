// SPDX-License-Identifier: Apache-2.0

//! Per-buffer checksums and the diagnostics surface.

use std::sync::atomic::Ordering;

use crate::region::RegionHandle;

/// CRC-32C (Castagnoli, reflected, init and final xor `0xFFFF_FFFF`).
#[inline]
pub fn checksum(payload: &[u8]) -> u32 {
    crc32c::crc32c(payload)
}

/// Point-in-time view of a stream's health.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsSnapshot {
    pub last_seq: u64,
    pub heartbeat_ns: u64,
    pub max_interpublish_ns: u64,
    pub checksum_enabled: bool,
    pub drops_observed: u64,
    /// Distinct frames observed over frames published, in `[0, 1]`.
    pub delivery_ratio: f64,
}

impl DiagnosticsSnapshot {
    /// Reads the header words of `region`. Delivery fields come from the
    /// region's recorded drop count until [`with_delivery`](Self::with_delivery)
    /// replaces them with a consumer's own accounting.
    pub fn from_region(region: &RegionHandle) -> Self {
        let last_seq = region.latest_seq();
        let drops = region.drops().min(last_seq);
        DiagnosticsSnapshot {
            last_seq,
            heartbeat_ns: region.heartbeat().load(Ordering::Acquire),
            max_interpublish_ns: region.max_interpublish_ns(),
            checksum_enabled: region.checksum_enabled(),
            drops_observed: drops,
            delivery_ratio: if last_seq == 0 {
                1.0
            } else {
                (last_seq - drops) as f64 / last_seq as f64
            },
        }
    }

    pub fn with_delivery(mut self, delivery: Delivery) -> Self {
        self.drops_observed = delivery.drops_observed;
        self.delivery_ratio = delivery.delivery_ratio;
        self
    }
}

/// Frames a consumer saw against frames published.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub observed: u64,
    pub drops_observed: u64,
    pub delivery_ratio: f64,
}

/// Delivery accounting from the strictly increasing sequence numbers a
/// consumer observed. Under the overwrite policy the "drops" are frames
/// skipped in favour of fresher ones.
pub fn compute_delivery(observed_seqs: &[u64], last_published: u64) -> Delivery {
    debug_assert!(
        observed_seqs.windows(2).all(|w| w[0] < w[1]),
        "observed sequence numbers must be strictly increasing"
    );
    let observed = observed_seqs.len() as u64;
    if last_published == 0 {
        return Delivery {
            observed,
            drops_observed: 0,
            delivery_ratio: 1.0,
        };
    }
    let observed = observed.min(last_published);
    Delivery {
        observed,
        drops_observed: last_published - observed,
        delivery_ratio: observed as f64 / last_published as f64,
    }
}
