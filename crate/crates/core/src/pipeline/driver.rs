// SPDX-License-Identifier: Apache-2.0

use std::sync::mpsc::{channel, Receiver};
use std::sync::Arc;

use super::stages::{
    AsrStage, FrontEndOutput, MemoryStage, PipelineQueues, Question, ReasoningStage, TtsWorker, VideoStage,
    VoiceFrontEnd,
};
use super::{Observer, PipelineError, PipelineEvent};
use crate::backends::Backends;
use crate::clock::Clock;
use crate::control::{ControlChannels, ControlMessage, InterruptSink};
use crate::gateway::{JsonMessage, SessionOutput, StatusLevel};
use crate::ingest::{Chunker, FramePayload, FrameSampler, SamplerOutput, TryPushError};
use crate::memory::MemoryBank;
use crate::reasoning::TtsRequest;
use crate::vad::{Vad, VoiceSegment};
use crate::{Config, SessionId};

/// Single-threaded driver: every call to [`Pipeline::step`] runs each stage
/// until its input queue is empty, in dataflow order, at the current clock
/// time. With a virtual clock the whole run is deterministic.
pub struct Pipeline {
    session: SessionId,
    cfg: Arc<Config>,
    clock: Arc<dyn Clock>,
    output: Arc<SessionOutput>,
    observer: Arc<dyn Observer>,
    queues: PipelineQueues,
    control_rx: Receiver<ControlMessage>,
    chunker: Chunker,
    sampler: FrameSampler,
    front: VoiceFrontEnd,
    video: VideoStage,
    memory: MemoryStage,
    asr: AsrStage,
    reasoning: ReasoningStage,
    tts: TtsWorker,
}

fn enqueue<T>(q: &crate::ingest::BoundedQueue<T>, item: T, name: &'static str) -> Result<(), PipelineError> {
    match q.try_push(item) {
        Ok(_) => Ok(()),
        Err(TryPushError::Full(_)) => Err(PipelineError::Backpressure(name)),
        Err(TryPushError::Closed(_)) => Err(PipelineError::Closed),
    }
}

impl Pipeline {
    pub fn new(
        session: SessionId,
        cfg: Arc<Config>,
        backends: Backends,
        clock: Arc<dyn Clock>,
        output: Arc<SessionOutput>,
        observer: Arc<dyn Observer>,
    ) -> Self {
        let (control_tx, control_rx) = channel();
        let sink: Arc<dyn InterruptSink> = output.clone();
        let front = VoiceFrontEnd::new(
            Vad::new(session.clone(), cfg.vad.clone()),
            ControlChannels::new(sink, control_tx),
        );
        let bank = MemoryBank::new(cfg.profile.clone(), cfg.memory.clone(), backends.compressor.clone());
        let memory = MemoryStage::new(bank);
        let reasoning = ReasoningStage::new(session.clone(), cfg.clone(), backends.clone(), memory.snapshots());
        Self {
            queues: PipelineQueues::new(&cfg.ingest),
            control_rx,
            chunker: Chunker::new(session.clone()),
            sampler: FrameSampler::new(session.clone(), cfg.ingest.frame_rate_fps, cfg.ingest.stall_threshold_ms),
            front,
            video: VideoStage::new(backends.frame_encoder.clone(), cfg.profile.clone()),
            memory,
            asr: AsrStage::new(backends.asr.clone()),
            reasoning,
            tts: TtsWorker::new(backends, output.clone()),
            session,
            cfg,
            clock,
            output,
            observer,
        }
    }

    pub fn output(&self) -> &Arc<SessionOutput> {
        &self.output
    }

    pub fn queues(&self) -> &PipelineQueues {
        &self.queues
    }

    pub fn memory(&self) -> &MemoryBank {
        self.memory.bank()
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn emit(&self, ev: PipelineEvent) {
        self.observer.on_event(&ev);
    }

    fn status(&self, level: StatusLevel, code: &str, message: String) {
        self.output
            .push_json(JsonMessage::status(Some(self.session.as_str()), level, code, message.clone()));
        self.emit(PipelineEvent::Status {
            t_ms: self.now(),
            code: code.into(),
            message,
        });
    }

    /// Appends inbound PCM bytes; complete chunks are queued for the VAD.
    pub fn push_audio_bytes(&mut self, bytes: &[u8]) -> Result<(), PipelineError> {
        for chunk in self.chunker.push(bytes) {
            enqueue(&self.queues.audio, chunk, "audio")?;
        }
        Ok(())
    }

    /// Offers a source frame to the sampler; sampled frames are queued.
    pub fn push_frame(&mut self, t_ms: u64, payload: FramePayload) -> Result<(), PipelineError> {
        for out in self.sampler.offer(t_ms, payload) {
            match out {
                SamplerOutput::Frame(f) => {
                    // Drop-oldest queue: overflow replaces the stalest frame.
                    let _ = self.queues.frames.try_push(f);
                }
                SamplerOutput::Stalled { gap_ms, t_ms } => self.status(
                    StatusLevel::Warn,
                    "stream_stalled",
                    format!("no video for {gap_ms} ms before t={t_ms}"),
                ),
            }
        }
        Ok(())
    }

    /// Earliest future time at which paced audio is due.
    pub fn next_wakeup(&self) -> Option<u64> {
        self.tts.pacer().next_release()
    }

    pub fn is_idle(&self) -> bool {
        self.queues.is_idle() && self.tts.pacer().is_empty()
    }

    fn on_front_end(&mut self, outputs: Vec<FrontEndOutput>) -> Result<(), PipelineError> {
        for o in outputs {
            match o {
                FrontEndOutput::VoiceStart { onset_ms, generation } => {
                    self.tts.purge(generation);
                    self.emit(PipelineEvent::VoiceStart {
                        t_ms: self.now(),
                        onset_ms,
                        generation,
                    });
                }
                FrontEndOutput::Segment(seg) => {
                    self.emit(PipelineEvent::VoiceEnd {
                        t_ms: self.now(),
                        segment_id: seg.id,
                        t_start_ms: seg.t_start_ms,
                        t_end_ms: seg.t_end_ms,
                    });
                    enqueue(&self.queues.asr, seg, "asr")?;
                }
            }
        }
        Ok(())
    }

    fn drain_control(&mut self) {
        while let Ok(msg) = self.control_rx.try_recv() {
            match self.memory.handle_control(&msg) {
                Ok(Some(snap)) => self.emit(PipelineEvent::Snapshot {
                    t_ms: self.now(),
                    snapshot_t_ms: snap.t_ms(),
                    clips: snap.len(),
                    content_hash: snap.content_hash(),
                }),
                Ok(None) => {}
                Err(e) => self.status(StatusLevel::Error, "snapshot_failed", e.to_string()),
            }
        }
    }

    fn run_memory(&mut self) {
        self.drain_control();
        while let Some(frame) = self.queues.frames.try_pop() {
            match self.video.process(&frame) {
                Ok(Some(clip)) => {
                    self.drain_control();
                    self.ingest_clip(&clip);
                }
                Ok(None) => {}
                Err(e) => self.status(StatusLevel::Error, "frame_rejected", e.to_string()),
            }
        }
    }

    fn ingest_clip(&mut self, clip: &crate::perception::ClipFeatures) {
        match self.memory.ingest(clip) {
            Ok(outcome) => self.emit(PipelineEvent::ClipIngested {
                t_ms: self.now(),
                clip_index: outcome.clip_index,
                t_end_ms: clip.t_end_ms,
                degraded: outcome.degraded,
            }),
            Err(e) => self.status(StatusLevel::Error, "clip_rejected", e.to_string()),
        }
    }

    fn run_asr(&mut self) -> Result<(), PipelineError> {
        while let Some(seg) = self.queues.asr.try_pop() {
            self.transcribe(&seg)?;
        }
        Ok(())
    }

    fn transcribe(&mut self, seg: &VoiceSegment) -> Result<(), PipelineError> {
        let (result, question) = self.asr.process(seg);
        self.output.push_json(JsonMessage::Transcript {
            session: self.session.to_string(),
            segment_id: result.segment_id,
            t_start_ms: result.t_start_ms,
            t_end_ms: result.t_end_ms,
            sound_class: result.sound_class.to_string(),
            text: result.transcript.clone(),
        });
        self.emit(PipelineEvent::Transcript {
            t_ms: self.now(),
            segment_id: result.segment_id,
            sound_class: result.sound_class.to_string(),
            text: result.transcript,
        });
        if let Some(q) = question {
            enqueue(&self.queues.llm, q, "llm")?;
        }
        Ok(())
    }

    fn run_reasoning(&mut self) -> Result<(), PipelineError> {
        while let Some(q) = self.queues.llm.try_pop() {
            let requests = self.answer(&q);
            for r in requests {
                if self.queues.tts.is_full() {
                    self.run_tts();
                }
                enqueue(&self.queues.tts, r, "tts")?;
            }
        }
        Ok(())
    }

    fn answer(&mut self, q: &Question) -> Vec<TtsRequest> {
        let generation = self.output.generation();
        let mut requests = Vec::new();
        let output = self.output.clone();
        let out = self.reasoning.process(
            q,
            generation,
            self.clock.as_ref(),
            &|| output.generation(),
            &mut |r| requests.push(r),
        );
        report_reasoning(&self.observer, &self.output, &self.session, self.now(), q, out);
        requests
    }

    fn run_tts(&mut self) {
        while let Some(req) = self.queues.tts.try_pop() {
            let now = self.now();
            match self.tts.submit(&req, now) {
                Ok(chunks) => self.emit(PipelineEvent::TtsChunks {
                    t_ms: now,
                    answer_id: req.answer_id,
                    generation: req.generation,
                    chunks,
                }),
                Err(ev) => self.emit(ev),
            }
        }
    }

    /// Runs every stage to quiescence at the current clock time.
    pub fn step(&mut self) -> Result<(), PipelineError> {
        while let Some(chunk) = self.queues.audio.try_pop() {
            let outputs = self.front.process(&chunk)?;
            self.on_front_end(outputs)?;
        }
        self.run_memory();
        self.run_asr()?;
        self.run_reasoning()?;
        self.run_tts();
        let now = self.now();
        self.tts.release(now);
        Ok(())
    }

    /// End of input: flushes the partial chunk, any open voice segment and
    /// the partial clip, then runs the stages.
    pub fn finish(&mut self) -> Result<(), PipelineError> {
        if let Some(chunk) = self.chunker.finish()? {
            enqueue(&self.queues.audio, chunk, "audio")?;
        }
        self.step()?;
        let outputs = self.front.flush()?;
        self.on_front_end(outputs)?;
        self.run_memory();
        if let Some(clip) = self.video.flush() {
            self.drain_control();
            self.ingest_clip(&clip);
        }
        self.step()
    }
}

/// Publishes the observable results of one reasoning pass.
pub(super) fn report_reasoning(
    observer: &Arc<dyn Observer>,
    output: &SessionOutput,
    session: &SessionId,
    now: u64,
    q: &Question,
    out: super::ReasoningOutput,
) {
    observer.on_event(&PipelineEvent::Gate {
        t_ms: now,
        segment_id: q.segment_id,
        text: q.text.clone(),
        decision: out.decision,
    });
    let Some(answer) = out.answer else { return };
    if let Some((retrieval, snapshot_t_ms)) = &out.retrieval {
        observer.on_event(&PipelineEvent::Retrieval {
            t_ms: now,
            answer_id: answer.answer_id,
            segment_id: q.segment_id,
            question: q.text.clone(),
            snapshot_t_ms: *snapshot_t_ms,
            ranked: retrieval.clips.iter().map(|c| (c.clip_index, c.score)).collect(),
            no_memory: retrieval.no_memory,
        });
    }
    if let Some(err) = &answer.error {
        output.push_json(JsonMessage::status(
            Some(session.as_str()),
            StatusLevel::Warn,
            "answer_degraded",
            err.clone(),
        ));
    }
    output.push_json(JsonMessage::Answer {
        session: session.to_string(),
        answer_id: answer.answer_id,
        generation: answer.generation,
        question: answer.question.clone(),
        text: answer.text.clone(),
        grounded: answer.grounded.clone(),
        is_final: true,
    });
    observer.on_event(&PipelineEvent::Answer {
        t_ms: now,
        segment_id: q.segment_id,
        answer,
    });
}
