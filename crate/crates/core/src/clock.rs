// SPDX-License-Identifier: Apache-2.0

//! Host clocks shared by every process on the machine.

use std::time::{SystemTime, UNIX_EPOCH};

/// Which host clock stamps publishes and heartbeats.
///
/// Writers and readers of one region must agree on the source; it is not
/// recorded in the region itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum ClockSource {
    /// `CLOCK_REALTIME`, nanoseconds since the Unix epoch.
    #[default]
    Realtime,
    /// `CLOCK_MONOTONIC`, nanoseconds since boot. System-wide on Linux, so
    /// stamps are comparable across processes.
    Monotonic,
}

impl ClockSource {
    #[inline]
    pub fn now_ns(self) -> u64 {
        match self {
            ClockSource::Realtime => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0),
            ClockSource::Monotonic => {
                let mut ts = libc::timespec {
                    tv_sec: 0,
                    tv_nsec: 0,
                };
                // SAFETY: ts is a valid out-pointer; CLOCK_MONOTONIC is always supported on Linux.
                unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
                ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
            }
        }
    }
}
