// SPDX-License-Identifier: Apache-2.0

//! Streaming perception, long-memory and reasoning orchestration.
//!
//! The crate is split along the runtime dataflow:
//!
//! ```text
//! gateway ─► ingest ─► Audio Queue ─► vad ─┬─► ASR Todo ─► perception(asr) ─► LLM Todo ─► reasoning ─► TTS Todo ─► tts ─► gateway
//!                                          └─(interrupt)──────────────────────────────────────────────────────────────► gateway
//!                                          └─(backup)──► memory
//!         ingest ─► Frame Queue ─► perception(video) ─► memory (compress, integrate, snapshot)
//! ```
//!
//! Every model role sits behind a trait in [`backends`]; the reference and
//! wizard implementations are pure functions so the whole pipeline can be
//! replayed deterministically by [`harness`].

pub mod backends;
pub mod clock;
pub mod config;
pub mod control;
pub mod gateway;
pub mod harness;
pub mod ingest;
pub mod matrix;
pub mod memory;
pub mod perception;
pub mod pipeline;
pub mod reasoning;
pub mod session;
pub mod vad;

pub use config::Config;
pub use matrix::Matrix;
pub use session::SessionId;

/// Protocol version shared by the gateway and the remote backend envelope.
pub const PROTOCOL_VERSION: &str = "ol/1";
