// SPDX-License-Identifier: Apache-2.0

//! Consume side of a stream.

use std::sync::atomic::{fence, Ordering};

use crate::clock::ClockSource;
use crate::error::{Error, Result};
use crate::frames::PointXYZ;
use crate::integrity::{self, DiagnosticsSnapshot};
use crate::region::{self, AccessMode, FrameKind, RegionHandle};

pub const DEFAULT_RETRY_LIMIT: u32 = 3;

#[derive(Debug, Clone)]
pub struct ReaderOptions {
    /// Copy attempts per read before reporting [`ReadOutcome::Contended`].
    pub retry_limit: u32,
    pub clock: ClockSource,
}

impl Default for ReaderOptions {
    fn default() -> Self {
        ReaderOptions {
            retry_limit: DEFAULT_RETRY_LIMIT,
            clock: ClockSource::Realtime,
        }
    }
}

/// Result of one read attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadOutcome {
    /// A frame newer than the last one consumed was copied out.
    Fresh {
        seq: u64,
        timestamp_ns: u64,
        effective_len: u64,
    },
    NoNewData,
    /// The writer overwrote the buffer during every copy attempt.
    Contended,
    /// No new data and the writer missed its liveness deadline.
    WriterStale { last_activity_ns: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Liveness {
    Alive,
    Stale { last_activity_ns: u64 },
}

/// A read-only consumer of a region. Copies out the newest frame and skips
/// anything it was too slow to see.
#[derive(Debug)]
pub struct Reader {
    region: RegionHandle,
    kind: FrameKind,
    last_seq: u64,
    deadline_ns: u64,
    retry_limit: u32,
    clock: ClockSource,
}

impl Reader {
    pub fn init(name: &str, kind: FrameKind, deadline_ns: u64) -> Result<Reader> {
        Self::init_with(name, kind, deadline_ns, ReaderOptions::default())
    }

    pub fn init_with(
        name: &str,
        kind: FrameKind,
        deadline_ns: u64,
        options: ReaderOptions,
    ) -> Result<Reader> {
        let region = region::attach_region_for(name, kind, AccessMode::ReadOnly)?;
        Ok(Reader {
            region,
            kind,
            last_seq: 0,
            deadline_ns,
            retry_limit: options.retry_limit.max(1),
            clock: options.clock,
        })
    }

    pub fn region(&self) -> &RegionHandle {
        &self.region
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    /// Sequence number of the last frame delivered, 0 before the first.
    pub fn last_sequence(&self) -> u64 {
        self.last_seq
    }

    /// Minimum destination size for [`try_read_latest`](Self::try_read_latest).
    pub fn buffer_len(&self) -> usize {
        self.region.layout().buffer_size
    }

    /// Copies the newest published frame into `dest` if it is newer than
    /// the last one delivered.
    ///
    /// Each attempt acquires the publish index, checks the buffer's version
    /// is even, copies exactly the published length and re-checks the
    /// version. A changed version means the writer lapped us; after
    /// `retry_limit` such attempts the read gives up with `Contended`.
    /// With checksums enabled a mismatch is an error and the frame is not
    /// consumed.
    pub fn try_read_latest(&mut self, dest: &mut [u8]) -> Result<ReadOutcome> {
        let capacity = self.region.layout().buffer_size;
        if dest.len() < capacity {
            return Err(Error::DestinationTooSmall {
                need: capacity,
                got: dest.len(),
            });
        }
        let elem = self.kind.element_bytes();
        let r = &self.region;
        for _ in 0..self.retry_limit {
            let f = (r.front_idx().load(Ordering::Acquire) & 1) as usize;
            let v1 = r.version(f).load(Ordering::Acquire);
            if v1 & 1 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let seq = r.seq(f).load(Ordering::Relaxed);
            if seq <= self.last_seq {
                fence(Ordering::Acquire);
                if r.version(f).load(Ordering::Relaxed) != v1 {
                    continue;
                }
                return Ok(ReadOutcome::NoNewData);
            }
            let len = r.published_len(f).load(Ordering::Relaxed);
            let timestamp_ns = r.timestamp(f).load(Ordering::Relaxed);
            let stored_crc = r.checksum(f).load(Ordering::Relaxed);
            let crc_on = r.checksum_flag().load(Ordering::Relaxed) != 0;
            let bytes = len.saturating_mul(elem);
            if bytes > capacity as u64 {
                fence(Ordering::Acquire);
                if r.version(f).load(Ordering::Relaxed) != v1 {
                    continue;
                }
                return Err(Error::Corrupt {
                    name: r.name().to_owned(),
                    reason: format!("published length {len} exceeds capacity"),
                });
            }
            let bytes = bytes as usize;
            // SAFETY: `bytes` <= buffer_size <= dest.len(). The source may be
            // concurrently overwritten; the version re-check below discards
            // any such copy.
            unsafe {
                std::ptr::copy_nonoverlapping(r.buffer_ptr(f), dest.as_mut_ptr(), bytes);
            }
            fence(Ordering::Acquire);
            if r.version(f).load(Ordering::Relaxed) != v1 {
                continue;
            }
            if crc_on {
                let computed = integrity::checksum(&dest[..bytes]);
                if computed != stored_crc {
                    return Err(Error::Integrity {
                        seq,
                        stored: stored_crc,
                        computed,
                    });
                }
            }
            self.last_seq = seq;
            return Ok(ReadOutcome::Fresh {
                seq,
                timestamp_ns,
                effective_len: len,
            });
        }
        Ok(ReadOutcome::Contended)
    }

    /// Point-cloud convenience over [`try_read_latest`](Self::try_read_latest).
    pub fn try_read_points(&mut self, dest: &mut [PointXYZ]) -> Result<ReadOutcome> {
        self.try_read_latest(bytemuck::cast_slice_mut(dest))
    }

    /// [`try_read_latest`](Self::try_read_latest), with `NoNewData` upgraded
    /// to `WriterStale` when the writer has missed its deadline.
    pub fn poll(&mut self, dest: &mut [u8]) -> Result<ReadOutcome> {
        let outcome = self.try_read_latest(dest)?;
        if outcome == ReadOutcome::NoNewData {
            if let Liveness::Stale { last_activity_ns } = self.check_liveness() {
                return Ok(ReadOutcome::WriterStale { last_activity_ns });
            }
        }
        Ok(outcome)
    }

    /// Compares the writer's latest heartbeat or publish against the
    /// deadline. A writer that never started is stale.
    pub fn check_liveness(&self) -> Liveness {
        self.liveness_at(self.clock.now_ns())
    }

    pub fn liveness_at(&self, now_ns: u64) -> Liveness {
        let last = self
            .region
            .heartbeat_ns()
            .max(self.region.latest_timestamp_ns());
        if last != 0 && now_ns.saturating_sub(last) <= self.deadline_ns {
            Liveness::Alive
        } else {
            Liveness::Stale {
                last_activity_ns: last,
            }
        }
    }

    pub fn snapshot(&self) -> DiagnosticsSnapshot {
        DiagnosticsSnapshot::from_region(&self.region)
    }
}
