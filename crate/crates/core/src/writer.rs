// SPDX-License-Identifier: Apache-2.0

//! Publish side of a stream.

use std::sync::atomic::{fence, Ordering};

use crate::clock::ClockSource;
use crate::error::{Error, Result};
use crate::frames::{ImageFrame, PointXYZ};
use crate::integrity::{self, DiagnosticsSnapshot};
use crate::region::{self, FrameKind, RegionHandle, RegionOptions};

#[derive(Debug, Clone)]
pub struct WriterOptions {
    /// Maintain a CRC-32C per buffer so readers can detect corruption.
    pub checksum: bool,
    pub clock: ClockSource,
    /// A writer lock held by a live process may be taken over once the
    /// region's heartbeat is older than this.
    pub steal_after_ns: u64,
    pub region: RegionOptions,
}

impl Default for WriterOptions {
    fn default() -> Self {
        WriterOptions {
            checksum: false,
            clock: ClockSource::Realtime,
            steal_after_ns: 1_000_000_000,
            region: RegionOptions::default(),
        }
    }
}

/// The single publisher of a region.
///
/// Each publish fills the hidden buffer and then flips the publish index.
/// The writer never looks at reader state and never waits.
#[derive(Debug)]
pub struct Writer {
    region: RegionHandle,
    kind: FrameKind,
    next_seq: u64,
    last_publish_ns: Option<u64>,
    checksum_enabled: bool,
    clock: ClockSource,
    pid: u64,
}

impl Writer {
    /// Creates the region or reattaches to it, continuing its sequence.
    pub fn init(name: &str, kind: FrameKind) -> Result<Writer> {
        Self::init_with(name, kind, WriterOptions::default())
    }

    pub fn init_with(name: &str, kind: FrameKind, options: WriterOptions) -> Result<Writer> {
        let region = region::create_region_with(name, kind, &options.region)?;
        let pid = std::process::id() as u64;
        acquire_writer_lock(&region, pid, options.clock, options.steal_after_ns)?;

        // A writer that died mid-publish leaves its back buffer odd. The
        // publish index never pointed at it, so making it even again is safe.
        for buf in 0..2 {
            let v = region.version(buf).load(Ordering::Relaxed);
            if v & 1 == 1 {
                region.version(buf).store(v + 1, Ordering::Release);
            }
        }

        let flag_set = region.checksum_enabled();
        if options.checksum && !flag_set {
            let elem = kind.element_bytes();
            for buf in 0..2 {
                let len = region.published_len(buf).load(Ordering::Relaxed) * elem;
                let len = (len as usize).min(region.layout().buffer_size);
                // SAFETY: we hold the writer lock, nobody else writes these bytes.
                let bytes = unsafe { std::slice::from_raw_parts(region.buffer_ptr(buf), len) };
                region
                    .checksum(buf)
                    .store(integrity::checksum(bytes), Ordering::Relaxed);
            }
            region.checksum_flag().store(1, Ordering::Release);
        } else if !options.checksum && flag_set {
            region.checksum_flag().store(0, Ordering::Release);
        }

        let next_seq = region.latest_seq() + 1;
        region
            .heartbeat()
            .store(options.clock.now_ns(), Ordering::Release);
        Ok(Writer {
            region,
            kind,
            next_seq,
            last_publish_ns: None,
            checksum_enabled: options.checksum,
            clock: options.clock,
            pid,
        })
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn region(&self) -> &RegionHandle {
        &self.region
    }

    /// Sequence number the next publish will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Publishes the first `effective_len` elements (points or bytes) of
    /// `payload` and returns the new frame's sequence number.
    pub fn write_frame(&mut self, payload: &[u8], effective_len: usize) -> Result<u64> {
        let capacity = self.kind.capacity_elements();
        if effective_len as u64 > capacity {
            return Err(Error::Capacity {
                requested: effective_len as u64,
                capacity,
            });
        }
        let bytes = effective_len * self.kind.element_bytes() as usize;
        if payload.len() < bytes {
            return Err(Error::ShortPayload {
                need: bytes,
                got: payload.len(),
            });
        }
        let payload = &payload[..bytes];
        let crc = self.checksum_enabled.then(|| integrity::checksum(payload));

        let r = &self.region;
        let back = 1 - (r.front_idx().load(Ordering::Relaxed) as usize & 1);
        let version = r.version(back).load(Ordering::Relaxed);
        r.version(back).store(version + 1, Ordering::Relaxed);
        fence(Ordering::Release);

        // SAFETY: `bytes` <= buffer_size (checked against capacity above);
        // the back buffer is ours until the flip, and readers detect overlap
        // through the odd version.
        unsafe {
            std::ptr::copy_nonoverlapping(payload.as_ptr(), r.buffer_ptr(back), bytes);
        }

        let now = self.clock.now_ns();
        let seq = self.next_seq;
        r.published_len(back)
            .store(effective_len as u64, Ordering::Relaxed);
        r.timestamp(back).store(now, Ordering::Relaxed);
        r.seq(back).store(seq, Ordering::Relaxed);
        if let Some(crc) = crc {
            r.checksum(back).store(crc, Ordering::Relaxed);
        }
        r.version(back).store(version + 2, Ordering::Release);
        r.front_idx().store(back as u32, Ordering::Release);

        r.heartbeat().store(now, Ordering::Release);
        if let Some(last) = self.last_publish_ns {
            let gap = now.saturating_sub(last);
            if gap > r.max_interpublish().load(Ordering::Relaxed) {
                r.max_interpublish().store(gap, Ordering::Release);
            }
        }
        self.last_publish_ns = Some(now);
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn write_points(&mut self, points: &[PointXYZ]) -> Result<u64> {
        self.write_frame(bytemuck::cast_slice(points), points.len())
    }

    pub fn write_image(&mut self, frame: &ImageFrame) -> Result<u64> {
        if self.kind != FrameKind::Image(frame.meta) {
            return Err(Error::InvalidKind(format!(
                "image {:?} does not match region kind {:?}",
                frame.meta, self.kind
            )));
        }
        self.write_frame(&frame.pixels, frame.pixels.len())
    }

    /// Stamps liveness without publishing.
    pub fn heartbeat(&mut self) {
        self.region
            .heartbeat()
            .store(self.clock.now_ns(), Ordering::Release);
    }

    pub fn snapshot(&self) -> DiagnosticsSnapshot {
        DiagnosticsSnapshot::from_region(&self.region)
    }
}

impl Drop for Writer {
    fn drop(&mut self) {
        let _ = self.region.writer_lock().compare_exchange(
            self.pid,
            0,
            Ordering::AcqRel,
            Ordering::Relaxed,
        );
    }
}

fn acquire_writer_lock(
    region: &RegionHandle,
    pid: u64,
    clock: ClockSource,
    steal_after_ns: u64,
) -> Result<()> {
    let lock = region.writer_lock();
    match lock.compare_exchange(0, pid, Ordering::AcqRel, Ordering::Acquire) {
        Ok(_) => Ok(()),
        Err(owner) => {
            let last_activity = region.heartbeat_ns().max(region.latest_timestamp_ns());
            let stale = clock.now_ns().saturating_sub(last_activity) > steal_after_ns;
            let dead = owner != pid && !process_alive(owner);
            if (dead || stale)
                && lock
                    .compare_exchange(owner, pid, Ordering::AcqRel, Ordering::Acquire)
                    .is_ok()
            {
                log::info!(
                    "{}: took over writer lock from pid {owner} ({})",
                    region.name(),
                    if dead { "exited" } else { "stale heartbeat" }
                );
                return Ok(());
            }
            Err(Error::WriterExclusive {
                name: region.name().to_owned(),
                owner,
            })
        }
    }
}

fn process_alive(pid: u64) -> bool {
    let Ok(pid) = libc::pid_t::try_from(pid) else {
        return false;
    };
    // SAFETY: signal 0 only probes for existence.
    if unsafe { libc::kill(pid, 0) } == 0 {
        return true;
    }
    std::io::Error::last_os_error().raw_os_error() != Some(libc::ESRCH)
}
