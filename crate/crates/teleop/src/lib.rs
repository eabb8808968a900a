//! Teleoperation service: a live dual-arm session driven over a WebSocket,
//! with recording of demonstrations and replay of the learned reference.

use std::net::SocketAddr;

pub mod live;
pub mod mailbox;
pub mod runtime;
pub mod server;
pub mod wire;

pub use live::{mirror_target, LiveConfig, LiveSim, SessionStatus};
pub use runtime::{Pacing, SimHandle};
pub use server::{serve_forever, Server};
pub use wire::{WireMessage, WIRE_SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Harness(#[from] rspread_harness::HarnessError),
}
