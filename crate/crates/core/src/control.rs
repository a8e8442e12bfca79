// SPDX-License-Identifier: Apache-2.0

//! Out-of-band control signals. These bypass the data queues so that an
//! interrupt is never stuck behind backpressure.

use std::sync::mpsc::Sender;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlMessage {
    /// Pause playback; `generation` is the outbound generation after the bump.
    Interrupt { t_ms: u64, generation: u64 },
    /// Save the current memory state for grounding the upcoming query.
    Backup { t_ms: u64 },
    StreamStalled { gap_ms: u64, t_ms: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ControlError {
    #[error("{0} control channel closed")]
    Closed(&'static str),
}

/// Receiver of interrupt signals (the session's outbound side).
pub trait InterruptSink: Send + Sync {
    /// Bumps the outbound generation and queues the interrupt ahead of any
    /// later audio. Returns the new generation.
    fn interrupt(&self, t_ms: u64) -> Result<u64, ControlError>;
}

/// The two onset channels fed by voice activity detection.
#[derive(Clone)]
pub struct ControlChannels {
    gateway: Arc<dyn InterruptSink>,
    memory: Sender<ControlMessage>,
}

impl ControlChannels {
    pub fn new(gateway: Arc<dyn InterruptSink>, memory: Sender<ControlMessage>) -> Self {
        Self { gateway, memory }
    }

    /// Issues `Interrupt` to the gateway and then `Backup` to memory, both
    /// stamped with the onset time.
    pub fn on_voice_start(&self, t_ms: u64) -> Result<[ControlMessage; 2], ControlError> {
        let generation = self.gateway.interrupt(t_ms)?;
        let backup = ControlMessage::Backup { t_ms };
        self.memory
            .send(backup.clone())
            .map_err(|_| ControlError::Closed("memory"))?;
        Ok([ControlMessage::Interrupt { t_ms, generation }, backup])
    }
}
