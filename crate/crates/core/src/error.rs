// SPDX-License-Identifier: Apache-2.0

use std::io;

use crate::region::FrameKind;

/// Errors produced by region management, the publish/consume protocol and
/// the baseline transport.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid stream name {0:?}: expected '/' followed by [A-Za-z0-9_/], at most 64 bytes")]
    InvalidName(String),

    #[error("invalid frame kind: {0}")]
    InvalidKind(String),

    #[error("region {name} exists with a different layout (existing {existing:?}, requested {requested:?})")]
    LayoutMismatch {
        name: String,
        existing: Box<FrameKind>,
        requested: Box<FrameKind>,
    },

    #[error("region {0} not found")]
    NotFound(String),

    #[error("region {name} is corrupt: {reason}")]
    Corrupt { name: String, reason: String },

    #[error("{op} on {name}: {source}")]
    Resource {
        op: &'static str,
        name: String,
        #[source]
        source: io::Error,
    },

    #[error("region {name} already has a live writer (pid {owner})")]
    WriterExclusive { name: String, owner: u64 },

    #[error("frame of {requested} elements exceeds capacity of {capacity}")]
    Capacity { requested: u64, capacity: u64 },

    #[error("payload span of {got} bytes is shorter than the {need} bytes the frame declares")]
    ShortPayload { need: usize, got: usize },

    #[error("destination holds {got} bytes but the region buffer needs {need}")]
    DestinationTooSmall { need: usize, got: usize },

    #[error("checksum mismatch on seq {seq}: stored {stored:#010x}, computed {computed:#010x}")]
    Integrity { seq: u64, stored: u32, computed: u32 },

    #[error("malformed frame record: {0}")]
    Parse(String),

    #[error("end of stream")]
    EndOfStream,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn resource(op: &'static str, name: &str, source: io::Error) -> Self {
        Error::Resource {
            op,
            name: name.to_owned(),
            source,
        }
    }
}
