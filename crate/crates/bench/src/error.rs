// SPDX-License-Identifier: Apache-2.0

use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no latency samples to summarize")]
    EmptySamples,

    #[error("invalid model input: {0}")]
    Model(String),

    #[error("{role} worker failed: {reason}")]
    Worker { role: String, reason: String },

    #[error("timed out waiting for {0}")]
    Timeout(String),

    #[error(transparent)]
    Transport(#[from] simshm::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
