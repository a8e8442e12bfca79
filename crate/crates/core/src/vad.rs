// SPDX-License-Identifier: Apache-2.0

//! Voice activity detection as a debounced RMS-energy state machine.
//!
//! ```text
//! Silence ──voiced──► Candidate ──onset_min_ms voiced──► Speech ──unvoiced──► Trailing
//!    ▲                    │                                ▲                   │
//!    └─────unvoiced───────┘                                └──────voiced───────┤
//!    └──────────────────────────── hangover_ms unvoiced ───────────────────────┘
//! ```
//!
//! `VoiceStart` fires when Candidate matures and is stamped with the first
//! Candidate chunk. `VoiceEnd` fires when Trailing matures or the segment
//! reaches `max_segment_ms`, and carries every sample from the Candidate
//! prefix through the closing chunk.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{rms, AudioChunk, CHUNK_MS, SAMPLE_RATE_HZ};
use crate::SessionId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    /// RMS amplitude in PCM units above which a chunk counts as voiced.
    pub energy_threshold: f64,
    pub onset_min_ms: u64,
    pub hangover_ms: u64,
    pub max_segment_ms: u64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            energy_threshold: 1000.0,
            onset_min_ms: 64,
            hangover_ms: 256,
            max_segment_ms: 30_000,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.energy_threshold > 0.0 && self.energy_threshold.is_finite()) {
            errs.push(format!(
                "vad.energy_threshold must be positive, got {}",
                self.energy_threshold
            ));
        }
        for (name, v) in [
            ("vad.onset_min_ms", self.onset_min_ms),
            ("vad.hangover_ms", self.hangover_ms),
            ("vad.max_segment_ms", self.max_segment_ms),
        ] {
            if v == 0 || v % CHUNK_MS != 0 {
                errs.push(format!("{name} must be a positive multiple of {CHUNK_MS} ms, got {v}"));
            }
        }
        if self.max_segment_ms < self.onset_min_ms {
            errs.push("vad.max_segment_ms must not be shorter than vad.onset_min_ms".into());
        }
        errs
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VadError {
    #[error("chunk out of sequence: expected seq {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("voice activity detector is faulted; chunk rejected")]
    Faulted,
}

/// Per-chunk voiced/unvoiced decision. Swappable for a model-based detector.
pub trait VadBackend: Send {
    fn is_voiced(&mut self, chunk: &AudioChunk) -> bool;
}

#[derive(Clone, Debug)]
pub struct EnergyDetector {
    threshold: f64,
}

impl EnergyDetector {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }
}

impl VadBackend for EnergyDetector {
    fn is_voiced(&mut self, chunk: &AudioChunk) -> bool {
        rms(&chunk.samples) > self.threshold
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VadPhase {
    Silence,
    Candidate,
    Speech,
    Trailing,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceSegment {
    /// Per-session segment counter; doubles as the query id downstream.
    pub id: u64,
    pub session_id: SessionId,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub samples: Vec<i16>,
}

impl VoiceSegment {
    pub fn duration_ms(&self) -> u64 {
        self.t_end_ms - self.t_start_ms
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VadEvent {
    VoiceStart { t_ms: u64 },
    VoiceEnd { segment: VoiceSegment },
}

#[derive(Clone, Debug)]
pub struct VadState {
    phase: VadPhase,
    open: Vec<i16>,
    open_start_ms: u64,
    candidate_ms: u64,
    trailing_ms: u64,
    expected_seq: u64,
    faulted: bool,
    next_segment_id: u64,
}

impl Default for VadState {
    fn default() -> Self {
        Self {
            phase: VadPhase::Silence,
            open: Vec::new(),
            open_start_ms: 0,
            candidate_ms: 0,
            trailing_ms: 0,
            expected_seq: 0,
            faulted: false,
            next_segment_id: 0,
        }
    }
}

impl VadState {
    pub fn phase(&self) -> VadPhase {
        self.phase
    }

    pub fn is_faulted(&self) -> bool {
        self.faulted
    }

    /// Advances the machine by one chunk.
    pub fn process_chunk(
        &mut self,
        chunk: &AudioChunk,
        cfg: &VadConfig,
        detector: &mut dyn VadBackend,
    ) -> Result<Vec<VadEvent>, VadError> {
        if self.faulted {
            return Err(VadError::Faulted);
        }
        if chunk.seq != self.expected_seq {
            self.faulted = true;
            return Err(VadError::OutOfOrder {
                expected: self.expected_seq,
                got: chunk.seq,
            });
        }
        self.expected_seq += 1;

        let voiced = detector.is_voiced(chunk);
        let dur = chunk.duration_ms();
        let chunk_end = chunk.t_start_ms + dur;
        let mut events = Vec::new();

        match (self.phase, voiced) {
            (VadPhase::Silence, false) => {}
            (VadPhase::Silence, true) => {
                self.phase = VadPhase::Candidate;
                self.open.clear();
                self.open.extend_from_slice(&chunk.samples);
                self.open_start_ms = chunk.t_start_ms;
                self.candidate_ms = dur;
            }
            (VadPhase::Candidate, true) => {
                self.open.extend_from_slice(&chunk.samples);
                self.candidate_ms += dur;
            }
            (VadPhase::Candidate, false) => {
                self.phase = VadPhase::Silence;
                self.open.clear();
                self.candidate_ms = 0;
            }
            (VadPhase::Speech, true) => self.open.extend_from_slice(&chunk.samples),
            (VadPhase::Speech, false) => {
                self.open.extend_from_slice(&chunk.samples);
                self.phase = VadPhase::Trailing;
                self.trailing_ms = dur;
            }
            (VadPhase::Trailing, true) => {
                self.open.extend_from_slice(&chunk.samples);
                self.phase = VadPhase::Speech;
                self.trailing_ms = 0;
            }
            (VadPhase::Trailing, false) => {
                self.open.extend_from_slice(&chunk.samples);
                self.trailing_ms += dur;
            }
        }

        if self.phase == VadPhase::Candidate && self.candidate_ms >= cfg.onset_min_ms {
            self.phase = VadPhase::Speech;
            events.push(VadEvent::VoiceStart {
                t_ms: self.open_start_ms,
            });
        }
        if self.phase == VadPhase::Trailing && self.trailing_ms >= cfg.hangover_ms {
            events.push(self.close(chunk_end, chunk));
        } else if matches!(self.phase, VadPhase::Speech | VadPhase::Trailing)
            && chunk_end - self.open_start_ms >= cfg.max_segment_ms
        {
            events.push(self.close(chunk_end, chunk));
        }
        Ok(events)
    }

    /// Closes any open speech episode at end of stream.
    pub fn flush(&mut self, session_id: &SessionId) -> Option<VadEvent> {
        match self.phase {
            VadPhase::Speech | VadPhase::Trailing => {
                let end = self.open_start_ms + samples_ms(self.open.len());
                Some(self.close_at(end, session_id.clone()))
            }
            VadPhase::Candidate => {
                self.phase = VadPhase::Silence;
                self.open.clear();
                None
            }
            VadPhase::Silence => None,
        }
    }

    fn close(&mut self, t_end_ms: u64, chunk: &AudioChunk) -> VadEvent {
        self.close_at(t_end_ms, chunk.session_id.clone())
    }

    fn close_at(&mut self, t_end_ms: u64, session_id: SessionId) -> VadEvent {
        let id = self.next_segment_id;
        self.next_segment_id += 1;
        self.phase = VadPhase::Silence;
        self.candidate_ms = 0;
        self.trailing_ms = 0;
        VadEvent::VoiceEnd {
            segment: VoiceSegment {
                id,
                session_id,
                t_start_ms: self.open_start_ms,
                t_end_ms,
                samples: std::mem::take(&mut self.open),
            },
        }
    }
}

fn samples_ms(n: usize) -> u64 {
    n as u64 * 1000 / u64::from(SAMPLE_RATE_HZ)
}

/// A session's detector: configuration, state and the per-chunk classifier.
pub struct Vad {
    cfg: VadConfig,
    state: VadState,
    detector: Box<dyn VadBackend>,
    session_id: SessionId,
}

impl Vad {
    pub fn new(session_id: SessionId, cfg: VadConfig) -> Self {
        let detector = Box::new(EnergyDetector::new(cfg.energy_threshold));
        Self::with_backend(session_id, cfg, detector)
    }

    pub fn with_backend(session_id: SessionId, cfg: VadConfig, detector: Box<dyn VadBackend>) -> Self {
        Self {
            cfg,
            state: VadState::default(),
            detector,
            session_id,
        }
    }

    pub fn process_chunk(&mut self, chunk: &AudioChunk) -> Result<Vec<VadEvent>, VadError> {
        self.state
            .process_chunk(chunk, &self.cfg, self.detector.as_mut())
    }

    pub fn flush(&mut self) -> Option<VadEvent> {
        self.state.flush(&self.session_id)
    }

    pub fn state(&self) -> &VadState {
        &self.state
    }

    pub fn config(&self) -> &VadConfig {
        &self.cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::chunk_audio;
    use crate::ingest::pcm_to_bytes;

    fn run(samples: &[i16], cfg: VadConfig) -> Vec<VadEvent> {
        let chunks = chunk_audio(&pcm_to_bytes(samples), SessionId::new("t")).unwrap();
        let mut vad = Vad::new(SessionId::new("t"), cfg);
        let mut ev: Vec<VadEvent> = chunks
            .iter()
            .flat_map(|c| vad.process_chunk(c).unwrap())
            .collect();
        ev.extend(vad.flush());
        ev
    }

    fn tone(ms: usize) -> Vec<i16> {
        (0..ms * 16)
            .map(|i| ((i as f64 * 2.0 * std::f64::consts::PI * 440.0 / 16000.0).sin() * 32767.0) as i16)
            .collect()
    }

    #[test]
    fn silence_yields_nothing() {
        let mut vad = Vad::new(SessionId::new("t"), VadConfig::default());
        let chunks = chunk_audio(&vec![0u8; 32_000], SessionId::new("t")).unwrap();
        for c in &chunks {
            assert!(vad.process_chunk(c).unwrap().is_empty());
            assert_eq!(vad.state().phase(), VadPhase::Silence);
        }
    }

    #[test]
    fn short_blip_never_matures() {
        let mut s = vec![0i16; 16 * 200];
        s.extend(tone(32));
        s.extend(vec![0; 16 * 400]);
        assert!(run(&s, VadConfig::default()).is_empty());
    }

    #[test]
    fn max_segment_forces_closure_and_restarts() {
        let cfg = VadConfig {
            max_segment_ms: 320,
            ..VadConfig::default()
        };
        let mut s = tone(700);
        s.extend(vec![0; 16 * 600]);
        let ev = run(&s, cfg);
        let starts = ev.iter().filter(|e| matches!(e, VadEvent::VoiceStart { .. })).count();
        let ends: Vec<&VoiceSegment> = ev
            .iter()
            .filter_map(|e| match e {
                VadEvent::VoiceEnd { segment } => Some(segment),
                _ => None,
            })
            .collect();
        assert_eq!(starts, ends.len());
        assert!(ends.len() >= 2);
        assert_eq!(ends[0].t_start_ms, 0);
        assert_eq!(ends[0].t_end_ms, 320);
        assert!(ends.iter().all(|s| s.duration_ms() <= 320));
    }

    #[test]
    fn out_of_order_faults_the_session() {
        let chunks = chunk_audio(&vec![0u8; 2048], SessionId::new("t")).unwrap();
        let mut vad = Vad::new(SessionId::new("t"), VadConfig::default());
        vad.process_chunk(&chunks[0]).unwrap();
        assert_eq!(
            vad.process_chunk(&chunks[2]),
            Err(VadError::OutOfOrder { expected: 1, got: 2 })
        );
        assert_eq!(vad.process_chunk(&chunks[1]), Err(VadError::Faulted));
        assert!(vad.state().is_faulted());
    }

    #[test]
    fn segment_is_exact_slice_of_input() {
        let mut s = vec![0i16; 16 * 500];
        s.extend(tone(400));
        s.extend(vec![0; 16 * 500]);
        let ev = run(&s, VadConfig::default());
        let VadEvent::VoiceEnd { segment } = &ev[1] else {
            panic!("expected VoiceEnd, got {ev:?}");
        };
        let a = (segment.t_start_ms * 16) as usize;
        let b = (segment.t_end_ms * 16) as usize;
        assert_eq!(segment.samples, s[a..b]);
        assert!(segment.duration_ms() >= VadConfig::default().onset_min_ms);
    }

    #[test]
    fn config_validation() {
        assert!(VadConfig::default().validate().is_empty());
        let bad = VadConfig {
            energy_threshold: 0.0,
            onset_min_ms: 10,
            ..VadConfig::default()
        };
        assert_eq!(bad.validate().len(), 2);
    }
}
