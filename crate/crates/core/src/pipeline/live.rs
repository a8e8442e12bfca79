// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::sync::mpsc::{channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::driver::report_reasoning;
use super::stages::{
    AsrStage, FrontEndOutput, MemoryStage, PipelineQueues, ReasoningStage, TtsWorker, VideoStage, VoiceFrontEnd,
};
use super::{Observer, PipelineError, PipelineEvent};
use crate::backends::Backends;
use crate::clock::Clock;
use crate::control::{ControlChannels, ControlMessage, InterruptSink};
use crate::gateway::{DepthProbe, JsonMessage, SessionOutput, StatusLevel};
use crate::ingest::{Chunker, FramePayload, FrameSampler, PopError, SamplerOutput};
use crate::memory::MemoryBank;
use crate::perception::ClipFeatures;
use crate::vad::Vad;
use crate::{Config, SessionId};

/// How long idle workers sleep between checks of secondary inputs.
const POLL: Duration = Duration::from_millis(2);

#[derive(Clone)]
struct Ctx {
    session: SessionId,
    clock: Arc<dyn Clock>,
    output: Arc<SessionOutput>,
    observer: Arc<dyn Observer>,
    fault: Arc<Mutex<Option<String>>>,
}

impl Ctx {
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

    fn fail(&self, stage: &str, e: PipelineError) {
        tracing::error!(session = %self.session, "{stage} worker failed: {e}");
        let mut f = self.fault.lock().unwrap_or_else(|e| e.into_inner());
        f.get_or_insert_with(|| format!("{stage}: {e}"));
        drop(f);
        self.status(StatusLevel::Error, "pipeline_fault", format!("{stage}: {e}"));
    }
}

/// Queue depths of a live session, published to the health endpoint.
struct Depths {
    queues: Arc<PipelineQueues>,
    output: Arc<SessionOutput>,
}

impl DepthProbe for Depths {
    fn depths(&self) -> BTreeMap<String, usize> {
        let mut d = self.queues.depths();
        d.insert("outbound_audio".into(), self.output.audio_depth());
        d
    }
}

/// Threaded driver: one worker per stage, connected by the bounded queues.
/// Backpressure is real here; producers block on full `Block` queues.
pub struct LiveSession {
    ctx: Ctx,
    queues: Arc<PipelineQueues>,
    chunker: Mutex<Chunker>,
    sampler: Mutex<FrameSampler>,
    bank: Arc<Mutex<MemoryStage>>,
    workers: Vec<JoinHandle<()>>,
}

impl LiveSession {
    pub fn start(
        session: SessionId,
        cfg: Arc<Config>,
        backends: Backends,
        clock: Arc<dyn Clock>,
        output: Arc<SessionOutput>,
        observer: Arc<dyn Observer>,
    ) -> Self {
        let ctx = Ctx {
            session: session.clone(),
            clock,
            output: output.clone(),
            observer,
            fault: Arc::new(Mutex::new(None)),
        };
        let queues = Arc::new(PipelineQueues::new(&cfg.ingest));
        let (control_tx, control_rx) = channel();
        let sink: Arc<dyn InterruptSink> = output.clone();
        let front = VoiceFrontEnd::new(
            Vad::new(session.clone(), cfg.vad.clone()),
            ControlChannels::new(sink, control_tx),
        );
        let bank = MemoryBank::new(cfg.profile.clone(), cfg.memory.clone(), backends.compressor.clone());
        let memory = MemoryStage::new(bank);
        let snapshots = memory.snapshots();
        let memory = Arc::new(Mutex::new(memory));

        let mut workers = Vec::new();
        let spawn = |name: &str, f: Box<dyn FnOnce() + Send>| {
            std::thread::Builder::new()
                .name(format!("ol-{name}"))
                .spawn(f)
                .expect("spawn pipeline worker")
        };
        {
            let (ctx, q) = (ctx.clone(), queues.clone());
            workers.push(spawn("vad", Box::new(move || vad_worker(ctx, q, front))));
        }
        {
            let (ctx, q, m) = (ctx.clone(), queues.clone(), memory.clone());
            let video = VideoStage::new(backends.frame_encoder.clone(), cfg.profile.clone());
            workers.push(spawn("memory", Box::new(move || memory_worker(ctx, q, video, m, control_rx))));
        }
        {
            let (ctx, q) = (ctx.clone(), queues.clone());
            let asr = AsrStage::new(backends.asr.clone());
            workers.push(spawn("asr", Box::new(move || asr_worker(ctx, q, asr))));
        }
        {
            let (ctx, q) = (ctx.clone(), queues.clone());
            let reasoning = ReasoningStage::new(session.clone(), cfg.clone(), backends.clone(), snapshots);
            workers.push(spawn("reasoning", Box::new(move || reasoning_worker(ctx, q, reasoning))));
        }
        {
            let (ctx, q) = (ctx.clone(), queues.clone());
            let tts = TtsWorker::new(backends, output);
            workers.push(spawn("tts", Box::new(move || tts_worker(ctx, q, tts))));
        }

        Self {
            ctx,
            chunker: Mutex::new(Chunker::new(session.clone())),
            sampler: Mutex::new(FrameSampler::new(
                session,
                cfg.ingest.frame_rate_fps,
                cfg.ingest.stall_threshold_ms,
            )),
            queues,
            bank: memory,
            workers,
        }
    }

    pub fn session(&self) -> &SessionId {
        &self.ctx.session
    }

    pub fn output(&self) -> &Arc<SessionOutput> {
        &self.ctx.output
    }

    /// Probe suitable for [`crate::gateway::Registration::set_probe`].
    pub fn depth_probe(&self) -> Arc<dyn DepthProbe> {
        Arc::new(Depths {
            queues: self.queues.clone(),
            output: self.ctx.output.clone(),
        })
    }

    pub fn depths(&self) -> BTreeMap<String, usize> {
        self.depth_probe().depths()
    }

    pub fn high_water(&self) -> BTreeMap<String, usize> {
        self.queues.high_water()
    }

    /// Clip count of the memory bank.
    pub fn memory_len(&self) -> usize {
        self.bank.lock().unwrap_or_else(|e| e.into_inner()).bank().len()
    }

    /// Blocks while the audio queue is full.
    pub fn push_audio_bytes(&self, bytes: &[u8]) -> Result<(), PipelineError> {
        let chunks = self.chunker.lock().unwrap_or_else(|e| e.into_inner()).push(bytes);
        for c in chunks {
            self.queues.audio.push(c).map_err(|_| PipelineError::Closed)?;
        }
        Ok(())
    }

    pub fn push_frame(&self, t_ms: u64, payload: FramePayload) -> Result<(), PipelineError> {
        let outs = self.sampler.lock().unwrap_or_else(|e| e.into_inner()).offer(t_ms, payload);
        for out in outs {
            match out {
                SamplerOutput::Frame(f) => {
                    self.queues.frames.push(f).map_err(|_| PipelineError::Closed)?;
                }
                SamplerOutput::Stalled { gap_ms, t_ms } => self.ctx.status(
                    StatusLevel::Warn,
                    "stream_stalled",
                    format!("no video for {gap_ms} ms before t={t_ms}"),
                ),
            }
        }
        Ok(())
    }

    /// End of input: lets every stage drain, including paced audio, then
    /// joins the workers.
    pub fn finish(mut self) -> Result<(), PipelineError> {
        let tail = self.chunker.lock().unwrap_or_else(|e| e.into_inner()).finish();
        let result = match tail {
            Ok(Some(c)) => self.queues.audio.push(c).map(|_| ()).map_err(|_| PipelineError::Closed),
            Ok(None) => Ok(()),
            Err(e) => Err(e.into()),
        };
        self.queues.audio.close();
        self.queues.frames.close();
        self.join();
        result?;
        match self.ctx.fault.lock().unwrap_or_else(|e| e.into_inner()).take() {
            Some(msg) => {
                tracing::warn!("session finished after fault: {msg}");
                Err(PipelineError::Closed)
            }
            None => Ok(()),
        }
    }

    /// Abandons queued work and joins the workers.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.queues.close_all();
        self.join();
    }

    fn join(&mut self) {
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for LiveSession {
    fn drop(&mut self) {
        if !self.workers.is_empty() {
            self.shutdown();
        }
    }
}

fn vad_worker(ctx: Ctx, q: Arc<PipelineQueues>, mut front: VoiceFrontEnd) {
    let forward = |ctx: &Ctx, outs: Vec<FrontEndOutput>| -> Result<(), PipelineError> {
        for o in outs {
            match o {
                FrontEndOutput::VoiceStart { onset_ms, generation } => ctx.emit(PipelineEvent::VoiceStart {
                    t_ms: ctx.now(),
                    onset_ms,
                    generation,
                }),
                FrontEndOutput::Segment(seg) => {
                    ctx.emit(PipelineEvent::VoiceEnd {
                        t_ms: ctx.now(),
                        segment_id: seg.id,
                        t_start_ms: seg.t_start_ms,
                        t_end_ms: seg.t_end_ms,
                    });
                    q.asr.push(seg).map_err(|_| PipelineError::Closed)?;
                }
            }
        }
        Ok(())
    };
    let mut run = || -> Result<(), PipelineError> {
        while let Some(chunk) = q.audio.pop() {
            let outs = front.process(&chunk)?;
            forward(&ctx, outs)?;
        }
        let outs = front.flush()?;
        forward(&ctx, outs)
    };
    if let Err(e) = run() {
        ctx.fail("vad", e);
    }
    q.asr.close();
    // Dropping `front` hangs up the control channel.
}

fn memory_worker(
    ctx: Ctx,
    q: Arc<PipelineQueues>,
    mut video: VideoStage,
    memory: Arc<Mutex<MemoryStage>>,
    control: Receiver<ControlMessage>,
) {
    let handle = |msg: ControlMessage| {
        let r = memory.lock().unwrap_or_else(|e| e.into_inner()).handle_control(&msg);
        match r {
            Ok(Some(snap)) => ctx.emit(PipelineEvent::Snapshot {
                t_ms: ctx.now(),
                snapshot_t_ms: snap.t_ms(),
                clips: snap.len(),
                content_hash: snap.content_hash(),
            }),
            Ok(None) => {}
            Err(e) => ctx.status(StatusLevel::Error, "snapshot_failed", e.to_string()),
        }
    };
    let drain = || {
        while let Ok(msg) = control.try_recv() {
            handle(msg);
        }
    };
    let ingest = |clip: &ClipFeatures| {
        let r = memory.lock().unwrap_or_else(|e| e.into_inner()).ingest(clip);
        match r {
            Ok(outcome) => ctx.emit(PipelineEvent::ClipIngested {
                t_ms: ctx.now(),
                clip_index: outcome.clip_index,
                t_end_ms: clip.t_end_ms,
                degraded: outcome.degraded,
            }),
            Err(e) => ctx.status(StatusLevel::Error, "clip_rejected", e.to_string()),
        }
    };
    loop {
        drain();
        match q.frames.pop_timeout(POLL) {
            Ok(frame) => match video.process(&frame) {
                Ok(Some(clip)) => {
                    drain();
                    ingest(&clip);
                }
                Ok(None) => {}
                Err(e) => ctx.status(StatusLevel::Error, "frame_rejected", e.to_string()),
            },
            Err(PopError::Timeout) => {}
            Err(PopError::Closed) => break,
        }
    }
    if let Some(clip) = video.flush() {
        drain();
        ingest(&clip);
    }
    // Late backups arrive until the voice front end hangs up.
    for msg in control.iter() {
        handle(msg);
    }
}

fn asr_worker(ctx: Ctx, q: Arc<PipelineQueues>, asr: AsrStage) {
    while let Some(seg) = q.asr.pop() {
        let (result, question) = asr.process(&seg);
        ctx.output.push_json(JsonMessage::Transcript {
            session: ctx.session.to_string(),
            segment_id: result.segment_id,
            t_start_ms: result.t_start_ms,
            t_end_ms: result.t_end_ms,
            sound_class: result.sound_class.to_string(),
            text: result.transcript.clone(),
        });
        ctx.emit(PipelineEvent::Transcript {
            t_ms: ctx.now(),
            segment_id: result.segment_id,
            sound_class: result.sound_class.to_string(),
            text: result.transcript,
        });
        if let Some(question) = question {
            if q.llm.push(question).is_err() {
                break;
            }
        }
    }
    q.llm.close();
}

fn reasoning_worker(ctx: Ctx, q: Arc<PipelineQueues>, mut reasoning: ReasoningStage) {
    while let Some(question) = q.llm.pop() {
        let generation = ctx.output.generation();
        let output = ctx.output.clone();
        let tts = q.tts.clone();
        let out = reasoning.process(
            &question,
            generation,
            ctx.clock.as_ref(),
            &|| output.generation(),
            &mut |r| {
                // A closed TTS queue means the session is shutting down.
                let _ = tts.push(r);
            },
        );
        report_reasoning(&ctx.observer, &ctx.output, &ctx.session, ctx.now(), &question, out);
    }
    q.tts.close();
}

fn tts_worker(ctx: Ctx, q: Arc<PipelineQueues>, mut tts: TtsWorker) {
    let mut inputs_open = true;
    loop {
        if inputs_open {
            match q.tts.pop_timeout(POLL) {
                Ok(req) => {
                    let now = ctx.now();
                    match tts.submit(&req, now) {
                        Ok(chunks) => ctx.emit(PipelineEvent::TtsChunks {
                            t_ms: now,
                            answer_id: req.answer_id,
                            generation: req.generation,
                            chunks,
                        }),
                        Err(ev) => ctx.emit(ev),
                    }
                }
                Err(PopError::Timeout) => {}
                Err(PopError::Closed) => inputs_open = false,
            }
        } else if tts.pacer().is_empty() || ctx.output.is_closed() {
            break;
        } else {
            std::thread::sleep(POLL);
        }
        tts.release(ctx.now());
    }
}
