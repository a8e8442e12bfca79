// SPDX-License-Identifier: Apache-2.0

//! Streaming perception: the audio path (sound class + transcript per voice
//! segment) and the video path (per-frame features grouped into clips).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::backends::{AsrBackend, BackendError, FrameEncoderBackend};
use crate::config::FeatureProfile;
use crate::ingest::{FramePayload, FrameRef, RawFrame};
use crate::vad::VoiceSegment;
use crate::Matrix;

/// Sound class label from an open set.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SoundClass {
    Speech,
    Silence,
    Laughing,
    Clapping,
    Raining,
    /// The backend failed; no transcript is available.
    Error,
    Other(String),
}

impl SoundClass {
    pub fn as_str(&self) -> &str {
        match self {
            SoundClass::Speech => "speech",
            SoundClass::Silence => "silence",
            SoundClass::Laughing => "laughing",
            SoundClass::Clapping => "clapping",
            SoundClass::Raining => "raining",
            SoundClass::Error => "error",
            SoundClass::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "speech" => SoundClass::Speech,
            "silence" => SoundClass::Silence,
            "laughing" => SoundClass::Laughing,
            "clapping" => SoundClass::Clapping,
            "raining" => SoundClass::Raining,
            "error" => SoundClass::Error,
            other => SoundClass::Other(other.to_string()),
        }
    }
}

impl fmt::Display for SoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for SoundClass {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SoundClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(SoundClass::parse(&String::deserialize(d)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioResult {
    pub segment_id: u64,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub sound_class: SoundClass,
    /// Empty unless `sound_class` is speech.
    pub transcript: String,
    pub backend_latency_ms: f64,
}

impl AudioResult {
    pub fn is_speech(&self) -> bool {
        self.sound_class == SoundClass::Speech
    }
}

/// Runs the audio model on one voice segment. Backend failures surface as
/// `SoundClass::Error`; segments are never retried.
pub fn classify_and_transcribe(segment: &VoiceSegment, backend: &dyn AsrBackend) -> AudioResult {
    let started = std::time::Instant::now();
    let (sound_class, transcript) = match backend.transcribe(segment) {
        Ok(out) if out.sound_class == SoundClass::Speech => (SoundClass::Speech, out.transcript),
        Ok(out) => (out.sound_class, String::new()),
        Err(e) => {
            tracing::warn!(segment = segment.id, error = %e, "audio backend failed");
            (SoundClass::Error, String::new())
        }
    };
    AudioResult {
        segment_id: segment.id,
        t_start_ms: segment.t_start_ms,
        t_end_ms: segment.t_end_ms,
        sound_class,
        transcript,
        backend_latency_ms: started.elapsed().as_secs_f64() * 1000.0,
    }
}

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("frame {seq} could not be decoded: {reason}")]
    Decode { seq: u64, reason: String },
    #[error("feature profile mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ProfileMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("clip assembler is faulted")]
    Faulted,
    #[error("frame features contain non-finite values")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub frame: FrameRef,
    /// `N x C` token matrix.
    pub tokens: Matrix,
}

/// Encodes one sampled frame. Replay frames carry their features already and
/// pass through unchanged.
pub fn extract_frame_features(
    frame: &RawFrame,
    backend: &dyn FrameEncoderBackend,
    profile: &FeatureProfile,
) -> Result<FrameFeatures, PerceptionError> {
    let tokens = match &frame.payload {
        FramePayload::Features(m) => m.clone(),
        FramePayload::Jpeg(bytes) => backend.encode(bytes, profile).map_err(|e| match e {
            BackendError::InvalidArgument(reason) => PerceptionError::Decode {
                seq: frame.seq,
                reason,
            },
            other => PerceptionError::Decode {
                seq: frame.seq,
                reason: other.to_string(),
            },
        })?,
    };
    if !tokens.is_finite() {
        return Err(PerceptionError::NonFinite);
    }
    Ok(FrameFeatures {
        frame: frame.frame_ref(),
        tokens,
    })
}

/// `F_k`: features of `T` consecutive frames stacked in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub clip_index: u64,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub frames: Vec<FrameRef>,
    /// `T·N x C`.
    pub features: Matrix,
}

impl ClipFeatures {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Groups frame features into clips of `frames_per_clip` frames.
#[derive(Debug)]
pub struct ClipAssembler {
    frames_per_clip: usize,
    tokens_per_frame: usize,
    channels: usize,
    buffer: Vec<FrameFeatures>,
    next_index: u64,
    faulted: bool,
}

impl ClipAssembler {
    pub fn new(profile: &FeatureProfile) -> Self {
        Self {
            frames_per_clip: profile.frames_per_clip,
            tokens_per_frame: profile.tokens_per_frame,
            channels: profile.channels,
            buffer: Vec::with_capacity(profile.frames_per_clip),
            next_index: 0,
            faulted: false,
        }
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_faulted(&self) -> bool {
        self.faulted
    }

    /// Adds one frame; returns a clip once `T` frames have accumulated.
    pub fn push(&mut self, frame: FrameFeatures) -> Result<Option<ClipFeatures>, PerceptionError> {
        if self.faulted {
            return Err(PerceptionError::Faulted);
        }
        let (rows, cols) = (frame.tokens.rows(), frame.tokens.cols());
        if rows != self.tokens_per_frame || cols != self.channels {
            self.faulted = true;
            return Err(PerceptionError::ProfileMismatch {
                expected_rows: self.tokens_per_frame,
                expected_cols: self.channels,
                rows,
                cols,
            });
        }
        self.buffer.push(frame);
        if self.buffer.len() == self.frames_per_clip {
            Ok(self.emit())
        } else {
            Ok(None)
        }
    }

    /// Emits the partial buffer as a short final clip.
    pub fn flush(&mut self) -> Option<ClipFeatures> {
        if self.faulted {
            return None;
        }
        self.emit()
    }

    fn emit(&mut self) -> Option<ClipFeatures> {
        if self.buffer.is_empty() {
            return None;
        }
        let frames: Vec<FrameFeatures> = std::mem::take(&mut self.buffer);
        let features = Matrix::vstack(frames.iter().map(|f| &f.tokens)).expect("uniform columns checked on push");
        let clip = ClipFeatures {
            clip_index: self.next_index,
            t_start_ms: frames[0].frame.t_ms,
            t_end_ms: frames[frames.len() - 1].frame.t_ms,
            frames: frames.iter().map(|f| f.frame).collect(),
            features,
        };
        self.next_index += 1;
        Some(clip)
    }
}

/// Offline helper: partition a frame stream into clips, flushing the tail.
pub fn assemble_clips(
    frames: impl IntoIterator<Item = FrameFeatures>,
    profile: &FeatureProfile,
) -> Result<Vec<ClipFeatures>, PerceptionError> {
    let mut asm = ClipAssembler::new(profile);
    let mut clips = Vec::new();
    for f in frames {
        clips.extend(asm.push(f)?);
    }
    clips.extend(asm.flush());
    Ok(clips)
}
