// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, VecDeque};
use std::ops::ControlFlow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PipelineError, PipelineEvent};
use crate::backends::{AsrBackend, Backends, FrameEncoderBackend};
use crate::clock::Clock;
use crate::config::{Config, FeatureProfile, IngestConfig};
use crate::control::{ControlChannels, ControlMessage};
use crate::gateway::{AudioFrame, JsonMessage, SessionOutput, StatusLevel};
use crate::ingest::{AudioChunk, BoundedQueue, OverflowPolicy, RawFrame, CHUNK_MS};
use crate::memory::{encode_question, retrieve, MemoryBank, MemoryError, MemorySnapshot, Retrieval, SnapshotStore};
use crate::perception::{classify_and_transcribe, AudioResult, ClipAssembler, ClipFeatures, PerceptionError};
use crate::reasoning::{
    build_prompt, generate_answer, predict_instruction, AnswerEvent, AnswerTimings, AudioOut, GateDecision,
    TtsRequest, TtsStage,
};
use crate::vad::{Vad, VadEvent, VoiceSegment};
use crate::SessionId;

/// A speech transcript on its way to the reasoning stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub segment_id: u64,
    pub text: String,
    /// VoiceStart time of the segment: the Backup that grounds this question.
    pub backup_t_ms: u64,
    pub voice_end_t_ms: u64,
}

/// The todo queues between stages.
#[derive(Clone)]
pub struct PipelineQueues {
    pub audio: BoundedQueue<AudioChunk>,
    pub frames: BoundedQueue<RawFrame>,
    pub asr: BoundedQueue<VoiceSegment>,
    pub llm: BoundedQueue<Question>,
    pub tts: BoundedQueue<TtsRequest>,
}

impl PipelineQueues {
    pub fn new(cfg: &IngestConfig) -> Self {
        Self {
            audio: BoundedQueue::new(cfg.audio_queue, OverflowPolicy::Block),
            frames: BoundedQueue::new(cfg.frame_queue, OverflowPolicy::DropOldest),
            asr: BoundedQueue::new(cfg.asr_queue, OverflowPolicy::Block),
            llm: BoundedQueue::new(cfg.llm_queue, OverflowPolicy::Block),
            tts: BoundedQueue::new(cfg.tts_queue, OverflowPolicy::Block),
        }
    }

    pub fn depths(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([
            ("audio".to_string(), self.audio.len()),
            ("frames".to_string(), self.frames.len()),
            ("asr".to_string(), self.asr.len()),
            ("llm".to_string(), self.llm.len()),
            ("tts".to_string(), self.tts.len()),
        ])
    }

    pub fn high_water(&self) -> BTreeMap<String, usize> {
        BTreeMap::from([
            ("audio".to_string(), self.audio.high_water()),
            ("frames".to_string(), self.frames.high_water()),
            ("asr".to_string(), self.asr.high_water()),
            ("llm".to_string(), self.llm.high_water()),
            ("tts".to_string(), self.tts.high_water()),
        ])
    }

    pub fn is_idle(&self) -> bool {
        self.audio.is_empty() && self.frames.is_empty() && self.asr.is_empty() && self.llm.is_empty() && self.tts.is_empty()
    }

    pub fn close_all(&self) {
        self.audio.close();
        self.frames.close();
        self.asr.close();
        self.llm.close();
        self.tts.close();
    }
}

pub enum FrontEndOutput {
    VoiceStart { onset_ms: u64, generation: u64 },
    Segment(VoiceSegment),
}

/// VAD plus the out-of-band control fan-out on voice onset.
pub struct VoiceFrontEnd {
    vad: Vad,
    controls: ControlChannels,
}

impl VoiceFrontEnd {
    pub fn new(vad: Vad, controls: ControlChannels) -> Self {
        Self { vad, controls }
    }

    fn map(&self, events: Vec<VadEvent>) -> Result<Vec<FrontEndOutput>, PipelineError> {
        let mut out = Vec::with_capacity(events.len());
        for ev in events {
            match ev {
                VadEvent::VoiceStart { t_ms } => {
                    let [interrupt, _backup] = self.controls.on_voice_start(t_ms)?;
                    let generation = match interrupt {
                        ControlMessage::Interrupt { generation, .. } => generation,
                        _ => unreachable!("first control message is the interrupt"),
                    };
                    out.push(FrontEndOutput::VoiceStart {
                        onset_ms: t_ms,
                        generation,
                    });
                }
                VadEvent::VoiceEnd { segment } => out.push(FrontEndOutput::Segment(segment)),
            }
        }
        Ok(out)
    }

    pub fn process(&mut self, chunk: &AudioChunk) -> Result<Vec<FrontEndOutput>, PipelineError> {
        let events = self.vad.process_chunk(chunk)?;
        self.map(events)
    }

    pub fn flush(&mut self) -> Result<Vec<FrontEndOutput>, PipelineError> {
        let events: Vec<VadEvent> = self.vad.flush().into_iter().collect();
        self.map(events)
    }
}

/// Frame encoding and clip assembly.
pub struct VideoStage {
    encoder: Arc<dyn FrameEncoderBackend>,
    profile: FeatureProfile,
    assembler: ClipAssembler,
}

impl VideoStage {
    pub fn new(encoder: Arc<dyn FrameEncoderBackend>, profile: FeatureProfile) -> Self {
        Self {
            assembler: ClipAssembler::new(&profile),
            encoder,
            profile,
        }
    }

    pub fn process(&mut self, frame: &RawFrame) -> Result<Option<ClipFeatures>, PerceptionError> {
        let f = crate::perception::extract_frame_features(frame, self.encoder.as_ref(), &self.profile)?;
        self.assembler.push(f)
    }

    pub fn flush(&mut self) -> Option<ClipFeatures> {
        self.assembler.flush()
    }
}

/// Owner of the live memory bank.
pub struct MemoryStage {
    bank: MemoryBank,
}

impl MemoryStage {
    pub fn new(bank: MemoryBank) -> Self {
        Self { bank }
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn snapshots(&self) -> SnapshotStore {
        self.bank.snapshot_store()
    }

    pub fn handle_control(&mut self, msg: &ControlMessage) -> Result<Option<MemorySnapshot>, MemoryError> {
        match msg {
            ControlMessage::Backup { t_ms } => self.bank.backup(*t_ms).map(Some),
            _ => Ok(None),
        }
    }

    pub fn ingest(&mut self, clip: &ClipFeatures) -> Result<crate::memory::IngestOutcome, MemoryError> {
        self.bank.ingest(clip)
    }
}

pub struct AsrStage {
    backend: Arc<dyn AsrBackend>,
}

impl AsrStage {
    pub fn new(backend: Arc<dyn AsrBackend>) -> Self {
        Self { backend }
    }

    /// Transcribes a segment; speech segments become questions.
    pub fn process(&self, segment: &VoiceSegment) -> (AudioResult, Option<Question>) {
        let r = classify_and_transcribe(segment, self.backend.as_ref());
        let q = r.is_speech().then(|| Question {
            segment_id: segment.id,
            text: r.transcript.clone(),
            backup_t_ms: segment.t_start_ms,
            voice_end_t_ms: segment.t_end_ms,
        });
        (r, q)
    }
}

pub struct ReasoningOutput {
    pub decision: GateDecision,
    pub retrieval: Option<(Retrieval, u64)>,
    pub answer: Option<AnswerEvent>,
}

pub struct ReasoningStage {
    session: SessionId,
    cfg: Arc<Config>,
    backends: Backends,
    snapshots: SnapshotStore,
    next_answer_id: u64,
}

impl ReasoningStage {
    pub fn new(session: SessionId, cfg: Arc<Config>, backends: Backends, snapshots: SnapshotStore) -> Self {
        Self {
            session,
            cfg,
            backends,
            snapshots,
            next_answer_id: 0,
        }
    }

    /// Gates, grounds and answers one question. Each finished sentence is
    /// handed to `on_sentence` as a TTS request stamped with `generation`;
    /// `current_generation` reports the live generation for optional
    /// cancellation on barge-in.
    pub fn process(
        &mut self,
        q: &Question,
        generation: u64,
        clock: &dyn Clock,
        current_generation: &dyn Fn() -> u64,
        on_sentence: &mut dyn FnMut(TtsRequest),
    ) -> ReasoningOutput {
        let t0 = clock.now_ms_f64();
        let decision = predict_instruction(&q.text, self.backends.gate.as_ref());
        let t1 = clock.now_ms_f64();
        if !decision.is_answer() {
            return ReasoningOutput {
                decision,
                retrieval: None,
                answer: None,
            };
        }
        let answer_id = self.next_answer_id;
        self.next_answer_id += 1;

        let snapshot = self.snapshots.restore_for_grounding(q.backup_t_ms);
        let mut error = None;
        let retrieval = match encode_question(
            snapshot.long_term(),
            &q.text,
            self.cfg.profile.channels,
            self.backends.compressor.as_ref(),
        )
        .and_then(|qf| retrieve(&qf, &snapshot, self.cfg.memory.top_k, self.cfg.memory.recency_bonus))
        {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!("retrieval failed, answering without memory: {e}");
                error = Some(format!("retrieval: {e}"));
                Retrieval {
                    clips: Vec::new(),
                    no_memory: true,
                }
            }
        };
        let t2 = clock.now_ms_f64();

        let prompt = build_prompt(&q.text, &retrieval.clips);
        let cancel = self.cfg.reasoning.cancel_llm_on_barge_in;
        let generated = generate_answer(
            &prompt,
            self.backends.reasoner.as_ref(),
            self.cfg.reasoning.sentence_streaming,
            &mut |s| {
                if cancel && current_generation() > generation {
                    return ControlFlow::Break(());
                }
                on_sentence(TtsRequest {
                    answer_id,
                    generation,
                    text: s.to_string(),
                });
                ControlFlow::Continue(())
            },
        );
        let t3 = clock.now_ms_f64();
        if let Some(e) = &generated.error {
            error = Some(format!("generation: {e}"));
        }
        let answer = AnswerEvent {
            session_id: self.session.clone(),
            answer_id,
            question: q.text.clone(),
            text: generated.text,
            grounded: prompt.clip_indices(),
            retrieved: retrieval.indices(),
            snapshot_t_ms: snapshot.t_ms(),
            generation,
            timings: AnswerTimings {
                gate_ms: t1 - t0,
                retrieve_ms: t2 - t1,
                generate_ms: t3 - t2,
            },
            error,
        };
        ReasoningOutput {
            decision,
            retrieval: Some((retrieval, snapshot.t_ms())),
            answer: Some(answer),
        }
    }
}

/// Releases synthesized chunks at playback pace: each chunk leaves 16 ms
/// after the previous one, and never before it was produced.
#[derive(Debug, Default)]
pub struct Pacer {
    pending: VecDeque<(u64, AudioOut)>,
    last_release: Option<u64>,
}

impl Pacer {
    pub fn push(&mut self, now: u64, chunks: Vec<AudioOut>) {
        for c in chunks {
            let after = self.pending.back().map(|(t, _)| *t).or(self.last_release);
            let t = after.map_or(now, |a| now.max(a + CHUNK_MS));
            self.pending.push_back((t, c));
        }
    }

    /// Drops pending chunks older than `generation`.
    pub fn purge(&mut self, generation: u64) {
        self.pending.retain(|(_, c)| c.generation >= generation);
    }

    pub fn next_release(&self) -> Option<u64> {
        self.pending.front().map(|(t, _)| *t)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Chunks due at `now` of the current generation or newer.
    pub fn release(&mut self, now: u64, generation: u64) -> Vec<(u64, AudioOut)> {
        self.purge(generation);
        let mut out = Vec::new();
        while self.pending.front().is_some_and(|(t, _)| *t <= now) {
            let (t, c) = self.pending.pop_front().expect("front checked");
            self.last_release = Some(t);
            out.push((t, c));
        }
        out
    }
}

/// Speech synthesis plus paced release to the session output.
pub struct TtsWorker {
    stage: TtsStage,
    pacer: Pacer,
    backends: Backends,
    output: Arc<SessionOutput>,
}

impl TtsWorker {
    pub fn new(backends: Backends, output: Arc<SessionOutput>) -> Self {
        Self {
            stage: TtsStage::new(),
            pacer: Pacer::default(),
            backends,
            output,
        }
    }

    pub fn pacer(&self) -> &Pacer {
        &self.pacer
    }

    /// Frees the playback schedule of chunks older than `generation`.
    pub fn purge(&mut self, generation: u64) {
        self.pacer.purge(generation);
    }

    /// Synthesizes one request; returns the chunk count or a status event.
    pub fn submit(&mut self, req: &TtsRequest, now: u64) -> Result<usize, PipelineEvent> {
        let generation = self.output.generation();
        self.pacer.purge(generation);
        match self
            .stage
            .synthesize_and_dispatch(req, self.backends.tts.as_ref(), generation)
        {
            Ok(chunks) => {
                let n = chunks.len();
                self.pacer.push(now, chunks);
                Ok(n)
            }
            Err(e) => {
                let message = format!("speech synthesis failed for answer {}: {e}", req.answer_id);
                self.output.push_json(JsonMessage::status(
                    Some(self.output.session().as_str()),
                    StatusLevel::Error,
                    "tts_failed",
                    message.clone(),
                ));
                Err(PipelineEvent::Status {
                    t_ms: now,
                    code: "tts_failed".into(),
                    message,
                })
            }
        }
    }

    /// Moves due chunks onto the session output; returns how many were sent.
    pub fn release(&mut self, now: u64) -> usize {
        let generation = self.output.generation();
        let mut sent = 0;
        for (t, c) in self.pacer.release(now, generation) {
            sent += usize::from(self.output.push_audio(AudioFrame {
                answer_id: c.answer_id,
                generation: c.generation,
                seq: c.seq,
                t_ms: t,
                samples: c.samples,
            }));
        }
        sent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(generation: u64, seq: u32) -> AudioOut {
        AudioOut {
            answer_id: 0,
            generation,
            seq,
            samples: vec![],
        }
    }

    #[test]
    fn pacer_spaces_chunks() {
        let mut p = Pacer::default();
        p.push(100, vec![out(0, 0), out(0, 1), out(0, 2)]);
        assert_eq!(p.next_release(), Some(100));
        let r: Vec<u64> = p.release(120, 0).iter().map(|(t, _)| *t).collect();
        assert_eq!(r, vec![100, 116]);
        p.push(200, vec![out(0, 3)]);
        let r: Vec<u64> = p.release(1000, 0).iter().map(|(t, _)| *t).collect();
        assert_eq!(r, vec![132, 200]);
    }

    #[test]
    fn pacer_purge_frees_schedule() {
        let mut p = Pacer::default();
        p.push(0, (0..100).map(|i| out(0, i)).collect());
        p.release(0, 0);
        p.purge(1);
        assert!(p.is_empty());
        p.push(50, vec![out(1, 0)]);
        assert_eq!(p.next_release(), Some(50));
    }
}
