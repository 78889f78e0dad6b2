//! Serving and consuming the tracker contract over a byte stream.
//!
//! [`serve`] exposes any [`TrackerFactory`](crate::trackers::TrackerFactory)
//! on a line-delimited JSON stream; [`connect`] returns a
//! [`RemoteSession`] that speaks the same protocol to a spawned subprocess
//! (over its stdin/stdout) or a TCP peer. The message schema is documented in
//! [`protocol`].

mod client;
pub mod protocol;
mod server;

use std::io;
use std::time::Duration;

use thiserror::Error;

pub use client::{connect, ConnectOptions, Endpoint, RemoteSession};
pub use protocol::{FramePayload, OracleMessage, PROTOCOL_VERSION};
pub use server::{serve, serve_tcp, ServeStats};

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("failed to spawn oracle command `{command}`: {source}")]
    Spawn { command: String, source: io::Error },
    #[error("failed to connect to {endpoint}: {source}")]
    Connect { endpoint: String, source: io::Error },
    #[error("transport i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("no response from oracle within {0:?}")]
    Timeout(Duration),
    #[error("oracle connection closed")]
    Closed,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("remote tracker error: {0}")]
    Remote(String),
}

impl BridgeError {
    /// True for faults of the channel itself, false for faults reported by
    /// (or attributable to) the remote tracker.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            BridgeError::Spawn { .. }
                | BridgeError::Connect { .. }
                | BridgeError::Io(_)
                | BridgeError::Timeout(_)
                | BridgeError::Closed
        )
    }
}
