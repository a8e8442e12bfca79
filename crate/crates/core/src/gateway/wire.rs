// SPDX-License-Identifier: Apache-2.0

//! Wire format.
//!
//! Binary frames: `kind: u8 | seq: u32 BE | t_ms: u64 BE | body`.
//! * `0x01` audio in: s16le mono 16 kHz PCM.
//! * `0x02` frame in: a JPEG image.
//! * `0x11` audio out: `generation: u32 BE | s16le PCM`.
//!
//! Text frames carry one JSON message tagged by `type`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::FeatureProfile;
use crate::ingest::{bytes_to_pcm, pcm_to_bytes};
use crate::PROTOCOL_VERSION;

pub const HEADER_LEN: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum BinaryKind {
    AudioIn = 0x01,
    FrameIn = 0x02,
    AudioOut = 0x11,
}

impl TryFrom<u8> for BinaryKind {
    type Error = WireError;

    fn try_from(b: u8) -> Result<Self, WireError> {
        match b {
            0x01 => Ok(Self::AudioIn),
            0x02 => Ok(Self::FrameIn),
            0x11 => Ok(Self::AudioOut),
            other => Err(WireError::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("binary frame shorter than the {HEADER_LEN}-byte header ({0} bytes)")]
    Truncated(usize),
    #[error("unknown binary frame kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("audio body has an odd byte count ({0})")]
    OddPcm(usize),
    #[error("invalid JSON message: {0}")]
    Json(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryFrame {
    pub kind: BinaryKind,
    pub seq: u32,
    pub t_ms: u64,
    pub body: Vec<u8>,
}

impl BinaryFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.t_ms.to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_LEN {
            return Err(WireError::Truncated(bytes.len()));
        }
        let kind = BinaryKind::try_from(bytes[0])?;
        let seq = u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes"));
        let t_ms = u64::from_be_bytes(bytes[5..13].try_into().expect("8 bytes"));
        Ok(Self {
            kind,
            seq,
            t_ms,
            body: bytes[HEADER_LEN..].to_vec(),
        })
    }

    pub fn audio_out(generation: u32, seq: u32, t_ms: u64, pcm: &[i16]) -> Self {
        let mut body = Vec::with_capacity(4 + pcm.len() * 2);
        body.extend_from_slice(&generation.to_be_bytes());
        body.extend_from_slice(&pcm_to_bytes(pcm));
        Self {
            kind: BinaryKind::AudioOut,
            seq,
            t_ms,
            body,
        }
    }

    /// Splits a `0x11` body into its generation and samples.
    pub fn audio_out_parts(&self) -> Result<(u32, Vec<i16>), WireError> {
        if self.body.len() < 4 {
            return Err(WireError::Truncated(self.body.len()));
        }
        let pcm = &self.body[4..];
        if pcm.len() % 2 != 0 {
            return Err(WireError::OddPcm(pcm.len()));
        }
        let generation = u32::from_be_bytes(self.body[..4].try_into().expect("4 bytes"));
        Ok((generation, bytes_to_pcm(pcm)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusLevel {
    Info,
    Warn,
    Error,
}

/// JSON text messages in both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum JsonMessage {
    /// Client → server, first message on a connection.
    Hello {
        v: String,
        session: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        profile: Option<ProfileRequest>,
    },
    Ready {
        v: String,
        session: String,
        profile: FeatureProfile,
    },
    /// Stop playback and discard pending audio of older generations.
    Interrupt {
        session: String,
        generation: u64,
        t_ms: u64,
    },
    Transcript {
        session: String,
        segment_id: u64,
        t_start_ms: u64,
        t_end_ms: u64,
        sound_class: String,
        text: String,
    },
    Answer {
        session: String,
        answer_id: u64,
        generation: u64,
        question: String,
        text: String,
        grounded: Vec<u64>,
        #[serde(rename = "final")]
        is_final: bool,
    },
    Status {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
        level: StatusLevel,
        code: String,
        message: String,
    },
    Bye {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
        reason: String,
    },
}

/// Profile fields a client may ask for; missing fields keep server defaults.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_per_clip: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_per_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_tokens_per_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
}

impl ProfileRequest {
    pub fn apply(&self, base: &FeatureProfile) -> FeatureProfile {
        FeatureProfile {
            frames_per_clip: self.frames_per_clip.unwrap_or(base.frames_per_clip),
            tokens_per_frame: self.tokens_per_frame.unwrap_or(base.tokens_per_frame),
            memory_tokens_per_frame: self.memory_tokens_per_frame.unwrap_or(base.memory_tokens_per_frame),
            channels: self.channels.unwrap_or(base.channels),
            sample_rate: self.sample_rate.unwrap_or(base.sample_rate),
        }
    }
}

impl JsonMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            JsonMessage::Hello { .. } => "hello",
            JsonMessage::Ready { .. } => "ready",
            JsonMessage::Interrupt { .. } => "interrupt",
            JsonMessage::Transcript { .. } => "transcript",
            JsonMessage::Answer { .. } => "answer",
            JsonMessage::Status { .. } => "status",
            JsonMessage::Bye { .. } => "bye",
        }
    }

    pub fn hello(session: &str) -> Self {
        JsonMessage::Hello {
            v: PROTOCOL_VERSION.into(),
            session: session.into(),
            profile: None,
        }
    }

    pub fn status(session: Option<&str>, level: StatusLevel, code: &str, message: impl Into<String>) -> Self {
        JsonMessage::Status {
            session: session.map(str::to_string),
            level,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn bye(session: Option<&str>, reason: &str) -> Self {
        JsonMessage::Bye {
            session: session.map(str::to_string),
            reason: reason.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, WireError> {
        serde_json::from_str(text).map_err(|e| WireError::Json(e.to_string()))
    }
}
