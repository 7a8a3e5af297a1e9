//! Newline-delimited JSON debug protocol. A frontend sends requests, the
//! server answers each with one response and pushes events (`stopped`,
//! `continued`, `output`, `terminated`, `log`) as the engine acts.
//!
//! Transports: stdio, raw TCP, and WebSocket on the same TCP port. Message
//! bodies are identical on every transport.

pub mod envelope;
pub mod server;
pub mod transport;

use thiserror::Error;

pub use envelope::{decode, encode, Envelope};
pub use server::{Server, RUN_SLICE_TICKS};
pub use transport::{bind, serve_connection, serve_stdio, serve_tcp_once, Incoming, LineTransport, Transport, WsTransport};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed envelope: {0}")]
    Malformed(String),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    WebSocket(#[from] tungstenite::Error),
}
