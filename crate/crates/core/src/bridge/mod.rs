//! Scoring through an external process, so the decoder can drive models
//! that live outside this crate.

pub mod client;
pub mod protocol;
pub mod serve;
pub mod transport;

use std::time::Duration;

use thiserror::Error;

pub use client::{bridge_check, BridgeScorer, ConformanceReport, DEFAULT_TIMEOUT};
pub use serve::{serve, DyadicTestModel, ServedModel};
pub use transport::{ChannelTransport, ChildTransport, StreamTransport, Transport};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot start bridge: {0}")]
    Startup(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("truncated response: {0:?}")]
    Truncated(String),
    #[error("bridge closed: {0}")]
    Closed(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("bridge reported: {0}")]
    Remote(String),
    #[error("bridge does not support {0}")]
    Unsupported(&'static str),
}
