// SPDX-License-Identifier: Apache-2.0

//! Named shared-memory regions: binary layout and lifecycle.
//!
//! A region is one POSIX shared-memory object holding a fixed header followed
//! by two payload buffers. The byte offsets in [`offsets`] together with
//! [`MAGIC`] form the compatibility contract between independently built
//! writer and reader binaries: every field is little-endian and naturally
//! aligned, the header occupies [`HEADER_BYTES`] (a cache-line multiple) and
//! each payload buffer starts on a cache-line boundary.
//!
//! ```text
//! 0               192                    192+stride           total (page rounded)
//! +---------------+----------------------+--------------------+----+
//! | RegionHeader  | buffer 0             | buffer 1           |pad |
//! +---------------+----------------------+--------------------+----+
//! ```
//!
//! Regions persist until [`destroy_region`] unlinks the name, so a crashed
//! writer or reader can attach again by name and carry on.

use std::ffi::CString;
use std::io;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::time::Duration;

use crate::error::{Error, Result};

#[cfg(target_endian = "big")]
compile_error!("the region layout is little-endian and this crate stores header words natively");

/// Layout identifier stamped at offset 0 of every region.
pub const MAGIC: [u8; 8] = *b"SIMREG01";
/// Cache-line size assumed by the layout, independent of the host.
pub const CACHE_LINE: usize = 64;
/// Size of the fixed region header.
pub const HEADER_BYTES: usize = 192;
/// Size of one point record (`x`, `y`, `z` as `f32` plus 4 bytes of padding).
pub const POINT_RECORD_BYTES: usize = 16;
/// Longest accepted stream name, in bytes.
pub const MAX_NAME_LEN: usize = 64;

const KIND_TAG_POINT_CLOUD: u32 = 1;
const KIND_TAG_IMAGE: u32 = 2;

/// Byte offsets of the header fields.
pub mod offsets {
    pub const MAGIC: usize = 0;
    /// `u32`: 1 = point cloud, 2 = image.
    pub const KIND_TAG: usize = 8;
    /// `[u32; 5]`: `max_points` for point clouds; width, height, channels,
    /// stride, depth for images.
    pub const KIND_DIMS: usize = 12;
    /// `u64`: payload bytes per buffer.
    pub const CAPACITY_BYTES: usize = 32;
    /// `u32` atomic, 0 or 1.
    pub const FRONT_IDX: usize = 40;
    /// `[u64; 2]` atomics; odd while the writer fills that buffer.
    pub const VERSION: usize = 48;
    /// `[u64; 2]`; 0 means never published.
    pub const SEQ: usize = 64;
    /// `[u64; 2]`, nanoseconds.
    pub const TIMESTAMP_NS: usize = 80;
    /// `[u64; 2]`, points or bytes depending on the kind.
    pub const PUBLISHED_LEN: usize = 96;
    /// `[u32; 2]`, CRC-32C of the published bytes.
    pub const CHECKSUM: usize = 112;
    /// `u32`, nonzero when checksums are maintained.
    pub const CHECKSUM_ENABLED: usize = 120;
    pub const HEARTBEAT_NS: usize = 128;
    pub const DROPS: usize = 136;
    pub const MAX_INTERPUBLISH_NS: usize = 144;
    /// `u64`: pid of the writer holding the region, 0 when free.
    pub const WRITER_LOCK: usize = 152;
}

/// Geometry of an image stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageMeta {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    /// Bytes per row, including any row padding.
    pub stride: u32,
    /// Bytes per channel element.
    pub depth: u32,
}

impl ImageMeta {
    /// Dense 8-bit image: `stride = width * channels`.
    pub fn dense(width: u32, height: u32, channels: u32) -> Self {
        ImageMeta {
            width,
            height,
            channels,
            stride: width.saturating_mul(channels),
            depth: 1,
        }
    }

    /// Bytes of pixel data in one row, excluding padding.
    pub fn row_bytes(&self) -> u64 {
        self.width as u64 * self.channels as u64 * self.depth as u64
    }

    pub fn byte_size(&self) -> u64 {
        self.stride as u64 * self.height as u64
    }

    pub fn validate(&self) -> Result<()> {
        let ImageMeta {
            width,
            height,
            channels,
            stride,
            depth,
        } = *self;
        if width == 0 || height == 0 || channels == 0 || stride == 0 || depth == 0 {
            return Err(Error::InvalidKind(format!("image dimensions must be >= 1: {self:?}")));
        }
        if (stride as u64) < self.row_bytes() {
            return Err(Error::InvalidKind(format!(
                "stride {stride} is shorter than a row of {} bytes",
                self.row_bytes()
            )));
        }
        Ok(())
    }
}

/// What a region carries, fixed at creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    /// Up to `max_points` 16-byte point records per frame.
    PointCloud { max_points: u32 },
    Image(ImageMeta),
}

impl FrameKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            FrameKind::PointCloud { max_points: 0 } => {
                Err(Error::InvalidKind("max_points must be >= 1".into()))
            }
            FrameKind::PointCloud { .. } => Ok(()),
            FrameKind::Image(meta) => meta.validate(),
        }
    }

    /// Bytes per element of the published length: a point record or a byte.
    pub fn element_bytes(&self) -> u64 {
        match self {
            FrameKind::PointCloud { .. } => POINT_RECORD_BYTES as u64,
            FrameKind::Image(_) => 1,
        }
    }

    /// Maximum published length, in elements.
    pub fn capacity_elements(&self) -> u64 {
        match self {
            FrameKind::PointCloud { max_points } => *max_points as u64,
            FrameKind::Image(meta) => meta.byte_size(),
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_elements() * self.element_bytes()
    }

    fn encode(&self) -> (u32, [u32; 5]) {
        match *self {
            FrameKind::PointCloud { max_points } => (KIND_TAG_POINT_CLOUD, [max_points, 0, 0, 0, 0]),
            FrameKind::Image(m) => (
                KIND_TAG_IMAGE,
                [m.width, m.height, m.channels, m.stride, m.depth],
            ),
        }
    }

    fn decode(tag: u32, dims: [u32; 5]) -> Option<FrameKind> {
        match tag {
            KIND_TAG_POINT_CLOUD => Some(FrameKind::PointCloud {
                max_points: dims[0],
            }),
            KIND_TAG_IMAGE => Some(FrameKind::Image(ImageMeta {
                width: dims[0],
                height: dims[1],
                channels: dims[2],
                stride: dims[3],
                depth: dims[4],
            })),
            _ => None,
        }
    }
}

/// Byte positions of the header and the two buffers inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutDescriptor {
    pub header_offset: usize,
    pub buffer_offset: [usize; 2],
    /// Payload bytes per buffer (the kind's capacity).
    pub buffer_size: usize,
    /// Mapping size, rounded up to the page size.
    pub total_size: usize,
}

/// Region layout for `kind` on this host.
pub fn layout_for(kind: &FrameKind) -> Result<LayoutDescriptor> {
    layout_for_page_size(kind, page_size())
}

/// Region layout for `kind` assuming `page_size`-byte pages. Only
/// `total_size` depends on the page size.
pub fn layout_for_page_size(kind: &FrameKind, page_size: usize) -> Result<LayoutDescriptor> {
    kind.validate()?;
    let buffer_size = usize::try_from(kind.capacity_bytes())
        .map_err(|_| Error::InvalidKind(format!("{kind:?} does not fit the address space")))?;
    let slot = round_up(buffer_size, CACHE_LINE);
    let first = HEADER_BYTES;
    let second = first + slot;
    let total_size = round_up(second + slot, page_size.max(1));
    Ok(LayoutDescriptor {
        header_offset: 0,
        buffer_offset: [first, second],
        buffer_size,
        total_size,
    })
}

fn round_up(value: usize, to: usize) -> usize {
    value.div_ceil(to) * to
}

/// Host page size in bytes.
pub fn page_size() -> usize {
    // SAFETY: sysconf has no preconditions.
    let v = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if v > 0 {
        v as usize
    } else {
        4096
    }
}

/// Checks a stream name: `/` followed by `[A-Za-z0-9_/]`, at most 64 bytes.
pub fn validate_name(name: &str) -> Result<()> {
    let ok = name.len() >= 2
        && name.len() <= MAX_NAME_LEN
        && name.starts_with('/')
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'/');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidName(name.to_owned()))
    }
}

/// Name of the OS shared-memory object backing a stream. POSIX objects may
/// not contain interior slashes, so those become `.`, which the stream
/// charset never produces.
pub fn os_object_name(name: &str) -> Result<CString> {
    validate_name(name)?;
    let mut s = String::with_capacity(name.len());
    s.push('/');
    s.extend(name[1..].chars().map(|c| if c == '/' { '.' } else { c }));
    Ok(CString::new(s).expect("validated names contain no NUL"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    ReadOnly,
    ReadWrite,
}

#[derive(Debug, Clone, Default)]
pub struct RegionOptions {
    /// Lock the mapping into RAM (`mlock`). Best effort: failure is logged.
    pub lock_pages: bool,
}

/// A process-local mapping of a region.
pub struct RegionHandle {
    name: String,
    base: NonNull<u8>,
    map_len: usize,
    layout: LayoutDescriptor,
    kind: FrameKind,
    mode: AccessMode,
}

// SAFETY: the mapping is process-wide memory; all shared header words are
// accessed through atomics.
unsafe impl Send for RegionHandle {}

impl std::fmt::Debug for RegionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegionHandle")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("mode", &self.mode)
            .field("layout", &self.layout)
            .finish()
    }
}

/// Creates the region `name` for `kind`, or attaches read-write if a region
/// with the same kind already exists. Published data is never cleared.
pub fn create_region(name: &str, kind: FrameKind) -> Result<RegionHandle> {
    create_region_with(name, kind, &RegionOptions::default())
}

pub fn create_region_with(
    name: &str,
    kind: FrameKind,
    options: &RegionOptions,
) -> Result<RegionHandle> {
    let os_name = os_object_name(name)?;
    let layout = layout_for(&kind)?;

    // SAFETY: os_name is a valid C string.
    let fd = unsafe {
        libc::shm_open(
            os_name.as_ptr(),
            libc::O_CREAT | libc::O_EXCL | libc::O_RDWR,
            0o600 as libc::mode_t,
        )
    };
    let handle = if fd < 0 {
        let err = io::Error::last_os_error();
        if err.raw_os_error() != Some(libc::EEXIST) {
            return Err(Error::resource("shm_open", name, err));
        }
        let handle = attach_region(name, AccessMode::ReadWrite)?;
        if handle.kind != kind {
            return Err(Error::LayoutMismatch {
                name: name.to_owned(),
                existing: Box::new(handle.kind),
                requested: Box::new(kind),
            });
        }
        handle
    } else {
        let fd = Fd(fd);
        // SAFETY: fd is a freshly opened shm object.
        if unsafe { libc::ftruncate(fd.0, layout.total_size as libc::off_t) } != 0 {
            let err = io::Error::last_os_error();
            // SAFETY: as above.
            unsafe { libc::shm_unlink(os_name.as_ptr()) };
            return Err(Error::resource("ftruncate", name, err));
        }
        let base = match map(&fd, layout.total_size, AccessMode::ReadWrite) {
            Ok(base) => base,
            Err(err) => {
                // SAFETY: as above.
                unsafe { libc::shm_unlink(os_name.as_ptr()) };
                return Err(Error::resource("mmap", name, err));
            }
        };
        let handle = RegionHandle {
            name: name.to_owned(),
            base,
            map_len: layout.total_size,
            layout,
            kind,
            mode: AccessMode::ReadWrite,
        };
        handle.stamp_new_header();
        handle
    };
    if options.lock_pages {
        handle.lock_pages();
    }
    Ok(handle)
}

/// Maps an existing region and verifies its magic and kind.
pub fn attach_region(name: &str, mode: AccessMode) -> Result<RegionHandle> {
    let os_name = os_object_name(name)?;
    let oflag = match mode {
        AccessMode::ReadOnly => libc::O_RDONLY,
        AccessMode::ReadWrite => libc::O_RDWR,
    };
    // SAFETY: os_name is a valid C string.
    let fd = unsafe { libc::shm_open(os_name.as_ptr(), oflag, 0) };
    if fd < 0 {
        let err = io::Error::last_os_error();
        return Err(if err.raw_os_error() == Some(libc::ENOENT) {
            Error::NotFound(name.to_owned())
        } else {
            Error::resource("shm_open", name, err)
        });
    }
    let fd = Fd(fd);

    // A concurrent creator may not have sized the object or stamped the
    // magic yet; give it a moment before calling the region corrupt.
    let mut size = 0;
    for attempt in 0..50 {
        size = fd.size().map_err(|e| Error::resource("fstat", name, e))?;
        if size >= HEADER_BYTES {
            break;
        }
        if attempt < 49 {
            std::thread::sleep(Duration::from_millis(2));
        }
    }
    if size < HEADER_BYTES {
        return Err(Error::Corrupt {
            name: name.to_owned(),
            reason: format!("object is {size} bytes, smaller than the header"),
        });
    }
    let base = map(&fd, size, mode).map_err(|e| Error::resource("mmap", name, e))?;
    let mut handle = RegionHandle {
        name: name.to_owned(),
        base,
        map_len: size,
        // provisional until the kind is read back
        layout: LayoutDescriptor {
            header_offset: 0,
            buffer_offset: [HEADER_BYTES, HEADER_BYTES],
            buffer_size: 0,
            total_size: size,
        },
        kind: FrameKind::PointCloud { max_points: 1 },
        mode,
    };

    let mut magic = handle.magic();
    for _ in 0..50 {
        if magic != [0; 8] {
            break;
        }
        std::thread::sleep(Duration::from_millis(2));
        magic = handle.magic();
    }
    if magic != MAGIC {
        return Err(handle.corrupt(format!("bad magic {magic:02x?}")));
    }
    let kind = handle
        .stored_kind()
        .ok_or_else(|| handle.corrupt("unknown frame kind tag".into()))?;
    let layout = layout_for(&kind).map_err(|e| handle.corrupt(e.to_string()))?;
    if layout.total_size > size {
        return Err(handle.corrupt(format!(
            "object is {size} bytes but its kind needs {}",
            layout.total_size
        )));
    }
    if handle.u64_field(offsets::CAPACITY_BYTES).load(Ordering::Relaxed) != kind.capacity_bytes() {
        return Err(handle.corrupt("capacity does not match kind".into()));
    }
    handle.kind = kind;
    handle.layout = layout;
    Ok(handle)
}

/// Attaches and checks that the region carries `kind`.
pub fn attach_region_for(name: &str, kind: FrameKind, mode: AccessMode) -> Result<RegionHandle> {
    kind.validate()?;
    let handle = attach_region(name, mode)?;
    if handle.kind != kind {
        return Err(Error::LayoutMismatch {
            name: name.to_owned(),
            existing: Box::new(handle.kind),
            requested: Box::new(kind),
        });
    }
    Ok(handle)
}

/// Unlinks `name`. Existing mappings stay valid until dropped. Destroying an
/// absent region succeeds.
pub fn destroy_region(name: &str) -> Result<()> {
    let os_name = os_object_name(name)?;
    // SAFETY: os_name is a valid C string.
    if unsafe { libc::shm_unlink(os_name.as_ptr()) } != 0 {
        let err = io::Error::last_os_error();
        if err.raw_os_error() != Some(libc::ENOENT) {
            return Err(Error::resource("shm_unlink", name, err));
        }
    }
    Ok(())
}

impl RegionHandle {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn layout(&self) -> LayoutDescriptor {
        self.layout
    }

    pub fn mode(&self) -> AccessMode {
        self.mode
    }

    /// Size of the mapping in bytes; constant for the handle's lifetime.
    pub fn mapped_len(&self) -> usize {
        self.map_len
    }

    /// Index of the currently published buffer.
    pub fn front_index(&self) -> usize {
        (self.front_idx().load(Ordering::Acquire) & 1) as usize
    }

    /// Largest sequence number published so far, 0 if none.
    pub fn latest_seq(&self) -> u64 {
        self.seq(0)
            .load(Ordering::Acquire)
            .max(self.seq(1).load(Ordering::Acquire))
    }

    pub fn heartbeat_ns(&self) -> u64 {
        self.heartbeat().load(Ordering::Acquire)
    }

    /// Newest publish timestamp across both buffers.
    pub fn latest_timestamp_ns(&self) -> u64 {
        self.timestamp(0)
            .load(Ordering::Acquire)
            .max(self.timestamp(1).load(Ordering::Acquire))
    }

    pub fn max_interpublish_ns(&self) -> u64 {
        self.u64_field(offsets::MAX_INTERPUBLISH_NS)
            .load(Ordering::Acquire)
    }

    pub fn drops(&self) -> u64 {
        self.u64_field(offsets::DROPS).load(Ordering::Acquire)
    }

    pub fn checksum_enabled(&self) -> bool {
        self.u32_field(offsets::CHECKSUM_ENABLED)
            .load(Ordering::Acquire)
            != 0
    }

    /// Pid of the writer currently holding the region, 0 if none.
    pub fn writer_owner(&self) -> u64 {
        self.writer_lock().load(Ordering::Acquire)
    }

    /// Stores a drop count observed by a diagnostics consumer.
    pub fn record_drops(&self, drops: u64) -> Result<()> {
        self.require_writable()?;
        self.u64_field(offsets::DROPS).store(drops, Ordering::Release);
        Ok(())
    }

    fn magic(&self) -> [u8; 8] {
        self.u64_field(offsets::MAGIC)
            .load(Ordering::Acquire)
            .to_le_bytes()
    }

    fn stored_kind(&self) -> Option<FrameKind> {
        let tag = self.u32_field(offsets::KIND_TAG).load(Ordering::Relaxed);
        let mut dims = [0u32; 5];
        for (i, d) in dims.iter_mut().enumerate() {
            *d = self
                .u32_field(offsets::KIND_DIMS + 4 * i)
                .load(Ordering::Relaxed);
        }
        FrameKind::decode(tag, dims)
    }

    fn stamp_new_header(&self) {
        let (tag, dims) = self.kind.encode();
        self.u32_field(offsets::KIND_TAG).store(tag, Ordering::Relaxed);
        for (i, d) in dims.iter().enumerate() {
            self.u32_field(offsets::KIND_DIMS + 4 * i)
                .store(*d, Ordering::Relaxed);
        }
        self.u64_field(offsets::CAPACITY_BYTES)
            .store(self.kind.capacity_bytes(), Ordering::Relaxed);
        // magic last: attachers treat a zero magic as "still initializing"
        self.u64_field(offsets::MAGIC)
            .store(u64::from_le_bytes(MAGIC), Ordering::Release);
    }

    fn lock_pages(&self) {
        // SAFETY: base/map_len describe our own live mapping.
        let rc = unsafe { libc::mlock(self.base.as_ptr().cast(), self.map_len) };
        if rc != 0 {
            log::warn!(
                "mlock({}) failed: {}",
                self.name,
                io::Error::last_os_error()
            );
        }
    }

    fn corrupt(&self, reason: String) -> Error {
        Error::Corrupt {
            name: self.name.clone(),
            reason,
        }
    }

    pub(crate) fn require_writable(&self) -> Result<()> {
        match self.mode {
            AccessMode::ReadWrite => Ok(()),
            AccessMode::ReadOnly => Err(Error::resource(
                "write",
                &self.name,
                io::Error::new(io::ErrorKind::PermissionDenied, "region mapped read-only"),
            )),
        }
    }

    #[inline]
    pub(crate) fn u64_field(&self, offset: usize) -> &AtomicU64 {
        debug_assert!(offset % 8 == 0 && offset + 8 <= HEADER_BYTES);
        // SAFETY: offset lies inside the header, is 8-aligned, and the
        // mapping (page aligned) outlives &self.
        unsafe { &*(self.base.as_ptr().add(offset) as *const AtomicU64) }
    }

    #[inline]
    pub(crate) fn u32_field(&self, offset: usize) -> &AtomicU32 {
        debug_assert!(offset % 4 == 0 && offset + 4 <= HEADER_BYTES);
        // SAFETY: as for u64_field.
        unsafe { &*(self.base.as_ptr().add(offset) as *const AtomicU32) }
    }

    #[inline]
    pub(crate) fn front_idx(&self) -> &AtomicU32 {
        self.u32_field(offsets::FRONT_IDX)
    }

    #[inline]
    pub(crate) fn version(&self, buf: usize) -> &AtomicU64 {
        self.u64_field(offsets::VERSION + 8 * buf)
    }

    #[inline]
    pub(crate) fn seq(&self, buf: usize) -> &AtomicU64 {
        self.u64_field(offsets::SEQ + 8 * buf)
    }

    #[inline]
    pub(crate) fn timestamp(&self, buf: usize) -> &AtomicU64 {
        self.u64_field(offsets::TIMESTAMP_NS + 8 * buf)
    }

    #[inline]
    pub(crate) fn published_len(&self, buf: usize) -> &AtomicU64 {
        self.u64_field(offsets::PUBLISHED_LEN + 8 * buf)
    }

    #[inline]
    pub(crate) fn checksum(&self, buf: usize) -> &AtomicU32 {
        self.u32_field(offsets::CHECKSUM + 4 * buf)
    }

    #[inline]
    pub(crate) fn checksum_flag(&self) -> &AtomicU32 {
        self.u32_field(offsets::CHECKSUM_ENABLED)
    }

    #[inline]
    pub(crate) fn heartbeat(&self) -> &AtomicU64 {
        self.u64_field(offsets::HEARTBEAT_NS)
    }

    #[inline]
    pub(crate) fn max_interpublish(&self) -> &AtomicU64 {
        self.u64_field(offsets::MAX_INTERPUBLISH_NS)
    }

    #[inline]
    pub(crate) fn writer_lock(&self) -> &AtomicU64 {
        self.u64_field(offsets::WRITER_LOCK)
    }

    /// Start of payload buffer `buf`. Writing through it requires a
    /// read-write mapping.
    #[inline]
    pub(crate) fn buffer_ptr(&self, buf: usize) -> *mut u8 {
        // SAFETY: buffer offsets lie inside the mapping (checked at attach).
        unsafe { self.base.as_ptr().add(self.layout.buffer_offset[buf]) }
    }
}

impl Drop for RegionHandle {
    fn drop(&mut self) {
        // SAFETY: base/map_len come from a successful mmap.
        unsafe { libc::munmap(self.base.as_ptr().cast(), self.map_len) };
    }
}

struct Fd(libc::c_int);

impl Fd {
    fn size(&self) -> io::Result<usize> {
        // SAFETY: zeroed stat is a valid out-buffer.
        let mut st: libc::stat = unsafe { std::mem::zeroed() };
        // SAFETY: fd is open.
        if unsafe { libc::fstat(self.0, &mut st) } != 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(st.st_size as usize)
    }
}

impl Drop for Fd {
    fn drop(&mut self) {
        // SAFETY: we own the descriptor.
        unsafe { libc::close(self.0) };
    }
}

fn map(fd: &Fd, len: usize, mode: AccessMode) -> io::Result<NonNull<u8>> {
    let prot = match mode {
        AccessMode::ReadOnly => libc::PROT_READ,
        AccessMode::ReadWrite => libc::PROT_READ | libc::PROT_WRITE,
    };
    // SAFETY: mapping a shared object we hold open; the kernel picks the address.
    let ptr = unsafe {
        libc::mmap(
            std::ptr::null_mut(),
            len,
            prot,
            libc::MAP_SHARED,
            fd.0,
            0,
        )
    };
    if ptr == libc::MAP_FAILED {
        return Err(io::Error::last_os_error());
    }
    Ok(NonNull::new(ptr.cast()).expect("mmap returned null without MAP_FAILED"))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unique(tag: &str) -> String {
        use std::sync::atomic::AtomicUsize;
        static N: AtomicUsize = AtomicUsize::new(0);
        format!(
            "/t_{}_{}_{}",
            tag,
            std::process::id(),
            N.fetch_add(1, Ordering::Relaxed)
        )
    }

    fn camera() -> FrameKind {
        FrameKind::Image(ImageMeta::dense(640, 480, 3))
    }

    #[test]
    fn header_fields_fit_and_are_aligned() {
        assert_eq!(HEADER_BYTES % CACHE_LINE, 0);
        assert!(offsets::WRITER_LOCK + 8 <= HEADER_BYTES);
        for off in [
            offsets::CAPACITY_BYTES,
            offsets::VERSION,
            offsets::SEQ,
            offsets::TIMESTAMP_NS,
            offsets::PUBLISHED_LEN,
            offsets::HEARTBEAT_NS,
            offsets::DROPS,
            offsets::MAX_INTERPUBLISH_NS,
            offsets::WRITER_LOCK,
        ] {
            assert_eq!(off % 8, 0, "offset {off}");
        }
    }

    #[test]
    fn lidar_layout() {
        let l = layout_for_page_size(&FrameKind::PointCloud { max_points: 2160 }, 4096).unwrap();
        assert_eq!(l.buffer_size, 34_560);
        assert_eq!(l.buffer_offset, [192, 192 + 34_560]);
        assert_eq!(l.total_size, 69_632);
        assert!(l.buffer_offset.iter().all(|o| o % CACHE_LINE == 0));
    }

    #[test]
    fn camera_layout() {
        let l = layout_for_page_size(&camera(), 4096).unwrap();
        assert_eq!(l.buffer_size, 921_600);
        assert_eq!(l.total_size % 4096, 0);
        assert!(l.total_size >= HEADER_BYTES + 2 * 921_600);
    }

    #[test]
    fn single_point_layout_is_one_page() {
        let page = page_size();
        let l = layout_for(&FrameKind::PointCloud { max_points: 1 }).unwrap();
        assert_eq!(l.buffer_size, POINT_RECORD_BYTES);
        assert_eq!(l.total_size, page);
    }

    #[test]
    fn odd_sized_buffers_stay_cache_aligned() {
        let kind = FrameKind::Image(ImageMeta {
            width: 3,
            height: 3,
            channels: 1,
            stride: 5,
            depth: 1,
        });
        let l = layout_for_page_size(&kind, 4096).unwrap();
        assert_eq!(l.buffer_size, 15);
        assert_eq!(l.buffer_offset[1] % CACHE_LINE, 0);
    }

    #[test]
    fn invalid_kinds_rejected() {
        assert!(layout_for(&FrameKind::PointCloud { max_points: 0 }).is_err());
        let narrow = ImageMeta {
            stride: 100,
            ..ImageMeta::dense(640, 480, 3)
        };
        assert!(matches!(
            layout_for(&FrameKind::Image(narrow)),
            Err(Error::InvalidKind(_))
        ));
        assert!(ImageMeta::dense(0, 4, 1).validate().is_err());
    }

    #[test]
    fn names() {
        for ok in ["/camera_front", "/lidar_top", "/a/b_c/9"] {
            validate_name(ok).unwrap();
        }
        let long = format!("/{}", "x".repeat(MAX_NAME_LEN));
        for bad in ["camera", "/", "/cam-front", "/cam.front", "", long.as_str()] {
            assert!(matches!(validate_name(bad), Err(Error::InvalidName(_))), "{bad}");
        }
        assert_eq!(
            os_object_name("/sensors/lidar").unwrap().to_str().unwrap(),
            "/sensors.lidar"
        );
    }

    #[test]
    fn create_stamps_header() {
        let name = unique("create");
        let h = create_region(&name, camera()).unwrap();
        assert_eq!(h.mapped_len(), layout_for(&camera()).unwrap().total_size);
        assert_eq!(h.magic(), MAGIC);
        assert_eq!(h.front_index(), 0);
        assert_eq!(h.latest_seq(), 0);
        assert_eq!(h.version(0).load(Ordering::Relaxed) % 2, 0);
        assert_eq!(h.version(1).load(Ordering::Relaxed) % 2, 0);
        assert_eq!(h.heartbeat_ns(), 0);
        assert_eq!(h.mode(), AccessMode::ReadWrite);
        destroy_region(&name).unwrap();
    }

    #[test]
    fn create_twice_keeps_published_state() {
        let name = unique("twice");
        let kind = FrameKind::PointCloud { max_points: 8 };
        let a = create_region(&name, kind).unwrap();
        a.seq(1).store(41, Ordering::Relaxed);
        let b = create_region(&name, kind).unwrap();
        assert_eq!(b.latest_seq(), 41);
        destroy_region(&name).unwrap();
    }

    #[test]
    fn create_with_other_kind_fails_and_leaves_region() {
        let name = unique("mismatch");
        let a = create_region(&name, FrameKind::PointCloud { max_points: 8 }).unwrap();
        a.seq(0).store(5, Ordering::Relaxed);
        let err = create_region(&name, FrameKind::PointCloud { max_points: 9 }).unwrap_err();
        assert!(matches!(err, Error::LayoutMismatch { .. }));
        let again = attach_region(&name, AccessMode::ReadOnly).unwrap();
        assert_eq!(again.kind(), FrameKind::PointCloud { max_points: 8 });
        assert_eq!(again.latest_seq(), 5);
        destroy_region(&name).unwrap();
    }

    #[test]
    fn attach_missing_is_not_found() {
        let err = attach_region(&unique("missing"), AccessMode::ReadOnly).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
    }

    #[test]
    fn attach_checks_expected_kind() {
        let name = unique("expect");
        let _h = create_region(&name, FrameKind::PointCloud { max_points: 4 }).unwrap();
        let err = attach_region_for(&name, camera(), AccessMode::ReadOnly).unwrap_err();
        assert!(matches!(err, Error::LayoutMismatch { .. }));
        destroy_region(&name).unwrap();
    }

    #[test]
    fn overwritten_magic_is_corrupt() {
        let name = unique("magic");
        let h = create_region(&name, FrameKind::PointCloud { max_points: 4 }).unwrap();
        h.u64_field(offsets::MAGIC)
            .store(u64::from_le_bytes(*b"GARBAGE!"), Ordering::Release);
        let err = attach_region(&name, AccessMode::ReadOnly).unwrap_err();
        assert!(matches!(err, Error::Corrupt { .. }), "{err}");
        destroy_region(&name).unwrap();
    }

    #[test]
    fn destroy_is_idempotent_and_mappings_survive() {
        let name = unique("destroy");
        let h = create_region(&name, FrameKind::PointCloud { max_points: 4 }).unwrap();
        h.seq(0).store(3, Ordering::Relaxed);
        let reader = attach_region(&name, AccessMode::ReadOnly).unwrap();
        destroy_region(&name).unwrap();
        destroy_region(&name).unwrap();
        assert_eq!(reader.latest_seq(), 3);
        assert!(matches!(
            attach_region(&name, AccessMode::ReadOnly),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn read_only_handles_refuse_mutation() {
        let name = unique("ro");
        let _h = create_region(&name, FrameKind::PointCloud { max_points: 4 }).unwrap();
        let ro = attach_region(&name, AccessMode::ReadOnly).unwrap();
        assert!(ro.record_drops(1).is_err());
        destroy_region(&name).unwrap();
    }

    #[test]
    fn lock_pages_option_is_best_effort() {
        let name = unique("mlock");
        let h = create_region_with(
            &name,
            FrameKind::PointCloud { max_points: 4 },
            &RegionOptions { lock_pages: true },
        )
        .unwrap();
        assert_eq!(h.latest_seq(), 0);
        destroy_region(&name).unwrap();
    }
}
