// SPDX-License-Identifier: Apache-2.0

//! WebSocket gateway: wire framing, per-session outbound lanes, session
//! lifecycle bookkeeping and the HTTP server.

mod output;
mod server;
mod session;
mod wire;

pub use output::{AudioFrame, Outbound, OutputStats, SessionOutput};
pub use server::{router, serve, ServerState};
pub use session::{
    DepthProbe, DuplicateSession, Registration, SessionLifecycle, SessionRegistry, SessionState, TransitionError,
};
pub use wire::{BinaryFrame, BinaryKind, JsonMessage, ProfileRequest, StatusLevel, WireError, HEADER_LEN};
