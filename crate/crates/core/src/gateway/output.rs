// SPDX-License-Identifier: Apache-2.0

//! Per-session outbound lanes. The control lane (JSON) always drains before
//! the audio lane; audio of a generation older than the current one is
//! discarded on enqueue, on interrupt and again right before write.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use tokio::sync::Notify;

use super::wire::{BinaryFrame, JsonMessage, StatusLevel};
use crate::control::{ControlError, InterruptSink};
use crate::SessionId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AudioFrame {
    pub answer_id: u64,
    pub generation: u64,
    pub seq: u32,
    pub t_ms: u64,
    pub samples: Vec<i16>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outbound {
    Json(JsonMessage),
    Audio(AudioFrame),
}

impl Outbound {
    /// Binary encoding for audio, text for JSON.
    pub fn encode(&self) -> Result<String, Vec<u8>> {
        match self {
            Outbound::Json(m) => Ok(m.to_json()),
            Outbound::Audio(a) => Err(BinaryFrame::audio_out(a.generation as u32, a.seq, a.t_ms, &a.samples).encode()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OutputStats {
    pub stale_dropped: u64,
    pub overflow_dropped: u64,
    pub audio_high_water: usize,
}

#[derive(Debug, Default)]
struct Lanes {
    control: VecDeque<JsonMessage>,
    audio: VecDeque<AudioFrame>,
    generation: u64,
    closed: bool,
    overflowing: bool,
    stats: OutputStats,
}

impl Lanes {
    fn purge_stale(&mut self) {
        let g = self.generation;
        let before = self.audio.len();
        self.audio.retain(|a| a.generation >= g);
        self.stats.stale_dropped += (before - self.audio.len()) as u64;
    }

    fn pop(&mut self) -> Option<Outbound> {
        if let Some(m) = self.control.pop_front() {
            return Some(Outbound::Json(m));
        }
        while let Some(a) = self.audio.pop_front() {
            if a.generation < self.generation {
                self.stats.stale_dropped += 1;
                continue;
            }
            return Some(Outbound::Audio(a));
        }
        None
    }
}

/// Outbound side of one session, shared by pipeline workers (producers) and
/// the connection writer (single consumer).
pub struct SessionOutput {
    session: SessionId,
    cap: usize,
    lanes: Mutex<Lanes>,
    ready: Condvar,
    notify: Notify,
}

impl std::fmt::Debug for SessionOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionOutput").field("session", &self.session).finish()
    }
}

impl SessionOutput {
    pub fn new(session: SessionId, audio_cap: usize) -> Arc<Self> {
        Arc::new(Self {
            session,
            cap: audio_cap.max(1),
            lanes: Mutex::new(Lanes::default()),
            ready: Condvar::new(),
            notify: Notify::new(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Lanes> {
        self.lanes.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn wake(&self) {
        self.ready.notify_all();
        self.notify.notify_one();
    }

    pub fn session(&self) -> &SessionId {
        &self.session
    }

    pub fn generation(&self) -> u64 {
        self.lock().generation
    }

    pub fn stats(&self) -> OutputStats {
        self.lock().stats
    }

    pub fn audio_depth(&self) -> usize {
        self.lock().audio.len()
    }

    pub fn is_closed(&self) -> bool {
        self.lock().closed
    }

    /// Bumps the generation, drops queued audio of older generations and
    /// queues an interrupt message ahead of any audio.
    pub fn interrupt_at(&self, t_ms: u64) -> Result<u64, ControlError> {
        let mut l = self.lock();
        if l.closed {
            return Err(ControlError::Closed("gateway"));
        }
        l.generation += 1;
        let generation = l.generation;
        l.purge_stale();
        l.control.push_back(JsonMessage::Interrupt {
            session: self.session.to_string(),
            generation,
            t_ms,
        });
        drop(l);
        self.wake();
        Ok(generation)
    }

    pub fn push_json(&self, msg: JsonMessage) -> bool {
        let mut l = self.lock();
        if l.closed {
            return false;
        }
        l.control.push_back(msg);
        drop(l);
        self.wake();
        true
    }

    /// Queues an audio frame. Returns false when the frame is stale or the
    /// output is closed. On overflow the oldest frame is dropped and a status
    /// notice is queued once per overflow episode.
    pub fn push_audio(&self, frame: AudioFrame) -> bool {
        let mut l = self.lock();
        if l.closed {
            return false;
        }
        if frame.generation < l.generation {
            l.stats.stale_dropped += 1;
            return false;
        }
        if l.audio.len() >= self.cap {
            l.audio.pop_front();
            l.stats.overflow_dropped += 1;
            if !l.overflowing {
                l.overflowing = true;
                l.control.push_back(JsonMessage::status(
                    Some(self.session.as_str()),
                    StatusLevel::Warn,
                    "outbound_overflow",
                    format!("client is reading too slowly; dropping oldest answer audio beyond {} chunks", self.cap),
                ));
            }
        } else if l.audio.len() < self.cap / 2 {
            l.overflowing = false;
        }
        l.audio.push_back(frame);
        l.stats.audio_high_water = l.stats.audio_high_water.max(l.audio.len());
        drop(l);
        self.wake();
        true
    }

    /// Next message in write order, without waiting.
    pub fn try_next(&self) -> Option<Outbound> {
        self.lock().pop()
    }

    /// Next message in write order; `None` once closed and drained or on
    /// timeout.
    pub fn next_blocking(&self, timeout: Duration) -> Option<Outbound> {
        let deadline = Instant::now() + timeout;
        let mut l = self.lock();
        loop {
            if let Some(m) = l.pop() {
                return Some(m);
            }
            if l.closed {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            l = self
                .ready
                .wait_timeout(l, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Async variant of [`Self::next_blocking`] for the connection writer;
    /// `None` once closed and drained.
    pub async fn next(&self) -> Option<Outbound> {
        loop {
            let notified = self.notify.notified();
            {
                let mut l = self.lock();
                if let Some(m) = l.pop() {
                    return Some(m);
                }
                if l.closed {
                    return None;
                }
            }
            notified.await;
        }
    }

    /// Stops accepting messages; queued control messages are still drained.
    pub fn close(&self) {
        let mut l = self.lock();
        l.closed = true;
        l.audio.clear();
        drop(l);
        self.wake();
    }
}

impl InterruptSink for SessionOutput {
    fn interrupt(&self, t_ms: u64) -> Result<u64, ControlError> {
        self.interrupt_at(t_ms)
    }
}
