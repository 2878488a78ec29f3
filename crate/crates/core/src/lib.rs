// SPDX-License-Identifier: Apache-2.0

//! Freshness-first shared-memory transport for high-rate sensor frames.
//!
//! Each stream owns a named shared-memory region holding a small header and
//! two payload buffers. One [`Writer`] fills the hidden buffer and flips the
//! publish index; any number of [`Reader`]s copy out the newest frame without
//! ever waiting on each other or on the writer. Frames a reader was too slow
//! to see are skipped, never queued.
//!
//! ```
//! use simshm::{destroy_region, gen_pointcloud, FrameKind, ReadOutcome, Reader, Writer};
//!
//! # fn main() -> simshm::Result<()> {
//! # let name = format!("/doc_lib_{}", std::process::id());
//! let kind = FrameKind::PointCloud { max_points: 2160 };
//! let mut writer = Writer::init(&name, kind)?;
//! let mut reader = Reader::init(&name, kind, 500_000_000)?;
//!
//! let frame = gen_pointcloud(1, 2160);
//! writer.write_points(&frame.points)?;
//!
//! let mut buf = vec![0u8; reader.buffer_len()];
//! match reader.try_read_latest(&mut buf)? {
//!     ReadOutcome::Fresh { seq, effective_len, .. } => {
//!         assert_eq!((seq, effective_len), (1, 2160));
//!     }
//!     other => panic!("unexpected {other:?}"),
//! }
//! # drop(writer);
//! destroy_region(&name)?;
//! # Ok(())
//! # }
//! ```

pub mod baseline;
pub mod clock;
mod error;
pub mod frames;
pub mod integrity;
pub mod reader;
pub mod region;
pub mod writer;

pub use clock::ClockSource;
pub use error::{Error, Result};
pub use frames::{
    gen_image, gen_pointcloud, validate_frame, validate_frame_sampled, ImageFrame, PointCloudFrame,
    PointXYZ,
};
pub use integrity::{checksum, compute_delivery, Delivery, DiagnosticsSnapshot};
pub use reader::{Liveness, ReadOutcome, Reader, ReaderOptions};
pub use region::{
    attach_region, create_region, destroy_region, layout_for, AccessMode, FrameKind, ImageMeta,
    LayoutDescriptor, RegionHandle, RegionOptions,
};
pub use writer::{Writer, WriterOptions};
