// SPDX-License-Identifier: Apache-2.0

//! The per-session pipeline, written as sans-IO stages that two drivers
//! share: [`Pipeline`] steps every stage to quiescence on the caller's
//! thread (used by deterministic replay), and [`LiveSession`] runs one
//! worker thread per stage connected by bounded queues.

mod driver;
mod live;
mod stages;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

pub use driver::Pipeline;
pub use live::LiveSession;
pub use stages::{
    AsrStage, FrontEndOutput, MemoryStage, Pacer, PipelineQueues, Question, ReasoningOutput, ReasoningStage,
    TtsWorker, VideoStage, VoiceFrontEnd,
};

use crate::control::ControlError;
use crate::ingest::IngestError;
use crate::reasoning::{AnswerEvent, GateDecision};
use crate::vad::VadError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Vad(#[from] VadError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("{0} queue is full")]
    Backpressure(&'static str),
    #[error("pipeline is closed")]
    Closed,
}

/// Everything observable about a session, in emission order. `t_ms` is the
/// pipeline clock at emission.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PipelineEvent {
    VoiceStart {
        t_ms: u64,
        onset_ms: u64,
        generation: u64,
    },
    VoiceEnd {
        t_ms: u64,
        segment_id: u64,
        t_start_ms: u64,
        t_end_ms: u64,
    },
    Snapshot {
        t_ms: u64,
        snapshot_t_ms: u64,
        clips: usize,
        content_hash: String,
    },
    ClipIngested {
        t_ms: u64,
        clip_index: u64,
        t_end_ms: u64,
        degraded: bool,
    },
    Transcript {
        t_ms: u64,
        segment_id: u64,
        sound_class: String,
        text: String,
    },
    Gate {
        t_ms: u64,
        segment_id: u64,
        text: String,
        decision: GateDecision,
    },
    Retrieval {
        t_ms: u64,
        answer_id: u64,
        segment_id: u64,
        question: String,
        snapshot_t_ms: u64,
        /// `(clip_index, score)` in rank order.
        ranked: Vec<(u64, f64)>,
        no_memory: bool,
    },
    Answer {
        t_ms: u64,
        segment_id: u64,
        #[serde(flatten)]
        answer: AnswerEvent,
    },
    TtsChunks {
        t_ms: u64,
        answer_id: u64,
        generation: u64,
        chunks: usize,
    },
    Status {
        t_ms: u64,
        code: String,
        message: String,
    },
}

impl PipelineEvent {
    pub fn t_ms(&self) -> u64 {
        match self {
            PipelineEvent::VoiceStart { t_ms, .. }
            | PipelineEvent::VoiceEnd { t_ms, .. }
            | PipelineEvent::Snapshot { t_ms, .. }
            | PipelineEvent::ClipIngested { t_ms, .. }
            | PipelineEvent::Transcript { t_ms, .. }
            | PipelineEvent::Gate { t_ms, .. }
            | PipelineEvent::Retrieval { t_ms, .. }
            | PipelineEvent::Answer { t_ms, .. }
            | PipelineEvent::TtsChunks { t_ms, .. }
            | PipelineEvent::Status { t_ms, .. } => *t_ms,
        }
    }
}

pub trait Observer: Send + Sync {
    fn on_event(&self, event: &PipelineEvent);
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullObserver;

impl Observer for NullObserver {
    fn on_event(&self, _: &PipelineEvent) {}
}

/// Keeps every event in memory.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Mutex<Vec<PipelineEvent>>,
}

impl EventLog {
    pub fn events(&self) -> Vec<PipelineEvent> {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Observer for EventLog {
    fn on_event(&self, event: &PipelineEvent) {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).push(event.clone());
    }
}

/// Queue depths and high-water marks by queue name.
pub type QueueDepths = BTreeMap<String, usize>;
