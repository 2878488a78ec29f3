// SPDX-License-Identifier: Apache-2.0

//! Native-layout frame schemas and deterministic synthetic frames.
//!
//! Every generated element is a function of the frame's sequence number and
//! the element's position, through [`mix64`]. A reader can therefore check a
//! received payload against `(seq, len)` alone, and any payload that splices
//! records from two publishes fails [`validate_frame`].

use bytemuck::{Pod, Zeroable};

use crate::region::{FrameKind, ImageMeta, POINT_RECORD_BYTES};

/// One point: three `f32` coordinates in metres plus 4 reserved bytes.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Pod, Zeroable)]
pub struct PointXYZ {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub pad: u32,
}

const _: () = assert!(std::mem::size_of::<PointXYZ>() == POINT_RECORD_BYTES);

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub points: Vec<PointXYZ>,
}

impl PointCloudFrame {
    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn as_bytes(&self) -> &[u8] {
        bytemuck::cast_slice(&self.points)
    }
}

/// Row-major interleaved pixels, `stride` bytes per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pub meta: ImageMeta,
    pub pixels: Vec<u8>,
}

impl ImageFrame {
    /// Bytes of element `(row, col, channel)`; `depth` bytes long.
    pub fn element(&self, row: u32, col: u32, channel: u32) -> &[u8] {
        let off = element_offset(&self.meta, row, col, channel);
        &self.pixels[off..off + self.meta.depth as usize]
    }

    pub fn row(&self, row: u32) -> &[u8] {
        let start = row as usize * self.meta.stride as usize;
        &self.pixels[start..start + self.meta.row_bytes() as usize]
    }
}

fn element_offset(meta: &ImageMeta, row: u32, col: u32, channel: u32) -> usize {
    row as usize * meta.stride as usize
        + (col as usize * meta.channels as usize + channel as usize) * meta.depth as usize
}

/// The public mixing function behind every synthetic payload.
///
/// `seq` and `index` are spread by two odd multipliers, xored, and passed
/// through the 64-bit finalizer of MurmurHash3.
#[inline]
pub fn mix64(seq: u64, index: u64) -> u64 {
    let mut z = seq.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z ^= z >> 33;
    z = z.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z ^= z >> 33;
    z = z.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z ^= z >> 33;
    z
}

/// Top 24 bits of the mix as a float in `[0, 1)`; exact in `f32`.
#[inline]
fn mix_to_unit(seq: u64, index: u64) -> f32 {
    (mix64(seq, index) >> 40) as f32 / (1u32 << 24) as f32
}

/// Xor of the eight bytes of the mix.
#[inline]
fn mix_to_byte(seq: u64, index: u64) -> u8 {
    let m = mix64(seq, index);
    let m = m ^ (m >> 32);
    let m = m ^ (m >> 16);
    (m ^ (m >> 8)) as u8
}

#[inline]
pub fn point_for(seq: u64, index: u64) -> PointXYZ {
    PointXYZ {
        x: seq as f32,
        y: index as f32,
        z: mix_to_unit(seq, index),
        pad: 0,
    }
}

pub fn gen_pointcloud(seq: u64, count: usize) -> PointCloudFrame {
    let mut points = vec![PointXYZ::default(); count];
    fill_pointcloud(seq, &mut points);
    PointCloudFrame { points }
}

/// Overwrites `points` with the frame for `seq`, without allocating.
pub fn fill_pointcloud(seq: u64, points: &mut [PointXYZ]) {
    for (i, p) in points.iter_mut().enumerate() {
        *p = point_for(seq, i as u64);
    }
}

pub fn gen_image(seq: u64, meta: ImageMeta) -> ImageFrame {
    let mut pixels = vec![0u8; meta.byte_size() as usize];
    fill_image(seq, &meta, &mut pixels);
    ImageFrame { meta, pixels }
}

/// Overwrites `pixels` (at least `meta.byte_size()` bytes) with the frame for
/// `seq`. Row padding is zeroed.
pub fn fill_image(seq: u64, meta: &ImageMeta, pixels: &mut [u8]) {
    let stride = meta.stride as usize;
    let row_bytes = meta.row_bytes() as usize;
    for (r, row) in pixels
        .chunks_exact_mut(stride)
        .take(meta.height as usize)
        .enumerate()
    {
        let base = (r * row_bytes) as u64;
        for (b, px) in row[..row_bytes].iter_mut().enumerate() {
            *px = mix_to_byte(seq, base + b as u64);
        }
        row[row_bytes..].fill(0);
    }
}

/// Expected byte at flat payload offset `offset` of image frame `seq`.
#[inline]
fn image_byte_at(seq: u64, meta: &ImageMeta, offset: usize) -> u8 {
    let stride = meta.stride as usize;
    let row_bytes = meta.row_bytes() as usize;
    let (r, b) = (offset / stride, offset % stride);
    if b >= row_bytes {
        0
    } else {
        mix_to_byte(seq, (r * row_bytes + b) as u64)
    }
}

fn check_len(kind: &FrameKind, payload: &[u8], effective_len: usize) -> Option<usize> {
    let need = effective_len.checked_mul(kind.element_bytes() as usize)?;
    (payload.len() >= need && effective_len as u64 <= kind.capacity_elements()).then_some(need)
}

fn point_matches(seq: u64, index: usize, rec: &[u8]) -> bool {
    let got: PointXYZ = bytemuck::pod_read_unaligned(rec);
    let want = point_for(seq, index as u64);
    got.x.to_bits() == want.x.to_bits()
        && got.y.to_bits() == want.y.to_bits()
        && got.z.to_bits() == want.z.to_bits()
        && got.pad == 0
}

/// Whether the first `effective_len` elements of `payload` are exactly the
/// generated frame `seq` for `kind`.
pub fn validate_frame(kind: &FrameKind, seq: u64, payload: &[u8], effective_len: usize) -> bool {
    let Some(need) = check_len(kind, payload, effective_len) else {
        return false;
    };
    match kind {
        FrameKind::PointCloud { .. } => payload[..need]
            .chunks_exact(POINT_RECORD_BYTES)
            .enumerate()
            .all(|(i, rec)| point_matches(seq, i, rec)),
        FrameKind::Image(meta) => {
            let stride = meta.stride as usize;
            let row_bytes = meta.row_bytes() as usize;
            payload[..need].chunks(stride).enumerate().all(|(r, row)| {
                let base = (r * row_bytes) as u64;
                let (pixels, pad) = row.split_at(row.len().min(row_bytes));
                pixels
                    .iter()
                    .enumerate()
                    .all(|(b, &px)| px == mix_to_byte(seq, base + b as u64))
                    && pad.iter().all(|&p| p == 0)
            })
        }
    }
}

/// Spot-check form of [`validate_frame`]: checks the element starting each
/// `granule`-byte block of the payload, and the last element.
///
/// A payload spliced from two publishes is still rejected whenever the
/// foreign span covers at least `granule` bytes. With `granule` at most the
/// element size this is the full check.
pub fn validate_frame_sampled(
    kind: &FrameKind,
    seq: u64,
    payload: &[u8],
    effective_len: usize,
    granule: usize,
) -> bool {
    let elem = kind.element_bytes() as usize;
    let step = (granule / elem).max(1);
    if step == 1 {
        return validate_frame(kind, seq, payload, effective_len);
    }
    let Some(_) = check_len(kind, payload, effective_len) else {
        return false;
    };
    if effective_len == 0 {
        return true;
    }
    let last = effective_len - 1;
    let mut indices = (0..effective_len).step_by(step).chain(std::iter::once(last));
    match kind {
        FrameKind::PointCloud { .. } => indices.all(|i| {
            let at = i * POINT_RECORD_BYTES;
            point_matches(seq, i, &payload[at..at + POINT_RECORD_BYTES])
        }),
        FrameKind::Image(meta) => indices.all(|i| payload[i] == image_byte_at(seq, meta, i)),
    }
}
