// SPDX-License-Identifier: Apache-2.0

//! Model-role contracts and their implementations.
//!
//! Six roles: audio transcription, frame encoding, memory compression,
//! instruction gating, answer generation and speech synthesis. Each role has
//! a deterministic reference implementation, the audio and reasoner roles
//! also have trace-driven wizard implementations, and every role can be
//! served by a remote model host over the JSON envelope in [`remote`].

mod hashvec;
mod reference;
pub mod remote;
mod wizard;

use std::ops::ControlFlow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hashvec::{fnv1a64, hashed_vector, tokenize, DimensionError, SplitMix64};
pub use reference::{
    ReferenceAsr, ReferenceCompressor, ReferenceFrameEncoder, ReferenceGate, ReferenceReasoner, ReferenceTts,
    TTS_MS_PER_CHAR, TTS_TONE_AMPLITUDE, TTS_TONE_HZ,
};
pub use wizard::{ExpectedAnswer, Utterance, WizardAsr, WizardReasoner};

use crate::config::FeatureProfile;
use crate::perception::SoundClass;
use crate::reasoning::{AssembledPrompt, GateDecision};
use crate::vad::VoiceSegment;
use crate::Matrix;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum BackendError {
    #[error("{role} backend timed out after {after_ms} ms")]
    Timeout { role: Role, after_ms: u64 },
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("backend application error: {0}")]
    Application(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Asr,
    FrameEncoder,
    Compressor,
    Gate,
    Reasoner,
    Tts,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Asr,
        Role::FrameEncoder,
        Role::Compressor,
        Role::Gate,
        Role::Reasoner,
        Role::Tts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Asr => "asr",
            Role::FrameEncoder => "frame_encoder",
            Role::Compressor => "compressor",
            Role::Gate => "gate",
            Role::Reasoner => "reasoner",
            Role::Tts => "tts",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AsrOutput {
    pub sound_class: SoundClass,
    pub transcript: String,
}

pub trait AsrBackend: Send + Sync {
    fn transcribe(&self, segment: &VoiceSegment) -> Result<AsrOutput, BackendError>;
}

pub trait FrameEncoderBackend: Send + Sync {
    /// Encodes a JPEG image into an `N x C` token matrix.
    fn encode(&self, jpeg: &[u8], profile: &FeatureProfile) -> Result<Matrix, BackendError>;
}

/// Compressor input for one clip: the three blocks `F ∘ H ∘ Ĥ` along the
/// token axis, kept separate so block boundaries are explicit.
#[derive(Clone, Copy, Debug)]
pub struct CompressionInput<'a> {
    pub features: &'a Matrix,
    pub short_term: &'a Matrix,
    pub global: &'a [f64],
}

impl CompressionInput<'_> {
    /// The blocks concatenated in order `F, H, Ĥ`.
    pub fn concatenated(&self) -> Matrix {
        let global = Matrix::from_rows(&[self.global]).expect("single row");
        Matrix::vstack([self.features, self.short_term, &global]).expect("blocks share C")
    }

    /// Row ranges of the `F`, `H` and `Ĥ` blocks within [`Self::concatenated`].
    pub fn block_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let f = self.features.rows();
        let h = f + self.short_term.rows();
        [0..f, f..h, h..h + 1]
    }
}

/// Integration input: short-term memories of a window of clips followed by
/// the global memories of every clip.
#[derive(Clone, Debug)]
pub struct IntegrationInput<'a> {
    pub short_term: Vec<&'a Matrix>,
    pub globals: Vec<&'a [f64]>,
}

pub trait CompressorBackend: Send + Sync {
    /// Spatial down-sampling of `F_k` (T·N rows) to the initial `H_k` (T·P rows).
    fn down_sample(&self, features: &Matrix, tokens_per_frame: usize, memory_tokens: usize) -> Result<Matrix, BackendError> {
        crate::memory::init_short_term(features, tokens_per_frame, memory_tokens)
            .map_err(|e| BackendError::InvalidArgument(e.to_string()))
    }

    /// Refreshes `(H_k, Ĥ_k)` from `[F_k ∘ H_k ∘ Ĥ_k]`.
    fn compress(&self, input: CompressionInput<'_>) -> Result<(Matrix, Vec<f64>), BackendError>;

    /// One long-term row per short-term block in `input.short_term`, in order.
    fn integrate(&self, input: &IntegrationInput<'_>) -> Result<Matrix, BackendError>;

    /// Last-position output over `[H̄ ∘ tokens]`.
    fn encode_question(&self, long_term: &Matrix, tokens: &[String], channels: usize) -> Result<Vec<f64>, BackendError>;
}

pub trait GateBackend: Send + Sync {
    fn predict(&self, transcript: &str) -> Result<GateDecision, BackendError>;
}

pub trait ReasonerBackend: Send + Sync {
    /// Streams answer text increments into `emit`; generation stops early when
    /// `emit` breaks.
    fn generate(
        &self,
        prompt: &AssembledPrompt,
        emit: &mut dyn FnMut(&str) -> ControlFlow<()>,
    ) -> Result<(), BackendError>;
}

pub trait TtsBackend: Send + Sync {
    /// 16 kHz mono PCM for `text`.
    fn synthesize(&self, text: &str) -> Result<Vec<i16>, BackendError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implementation {
    Reference,
    /// Reads ground truth from replay-trace annotations.
    Wizard,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendDescriptor {
    pub implementation: Implementation,
    /// Remote endpoint URL; empty unless `implementation = "remote"`.
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
}

impl Default for BackendDescriptor {
    fn default() -> Self {
        Self {
            implementation: Implementation::Reference,
            endpoint: String::new(),
            timeout_ms: 2000,
            max_retries: 2,
            max_in_flight: 2,
        }
    }
}

impl BackendDescriptor {
    pub fn validate(&self, role: Role) -> Vec<String> {
        let mut errs = Vec::new();
        if self.timeout_ms == 0 {
            errs.push(format!("backends.{role}.timeout_ms must be positive"));
        }
        if self.max_in_flight == 0 {
            errs.push(format!("backends.{role}.max_in_flight must be positive"));
        }
        match self.implementation {
            Implementation::Remote if self.endpoint.is_empty() => {
                errs.push(format!("backends.{role}.endpoint is required for remote backends"))
            }
            Implementation::Wizard if !matches!(role, Role::Asr | Role::Reasoner) => {
                errs.push(format!("backends.{role}.implementation: wizard is only available for asr and reasoner"))
            }
            _ => {}
        }
        errs
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub asr: BackendDescriptor,
    pub frame_encoder: BackendDescriptor,
    pub compressor: BackendDescriptor,
    pub gate: BackendDescriptor,
    pub reasoner: BackendDescriptor,
    pub tts: BackendDescriptor,
}

impl BackendsConfig {
    pub fn get(&self, role: Role) -> &BackendDescriptor {
        match role {
            Role::Asr => &self.asr,
            Role::FrameEncoder => &self.frame_encoder,
            Role::Compressor => &self.compressor,
            Role::Gate => &self.gate,
            Role::Reasoner => &self.reasoner,
            Role::Tts => &self.tts,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        Role::ALL
            .iter()
            .flat_map(|&r| self.get(r).validate(r))
            .collect()
    }
}

/// Ground truth available to wizard backends.
#[derive(Clone, Debug, Default)]
pub struct WizardData {
    pub utterances: Vec<Utterance>,
    pub answers: Vec<ExpectedAnswer>,
}

/// One instance per role, shareable across workers.
#[derive(Clone)]
pub struct Backends {
    pub asr: Arc<dyn AsrBackend>,
    pub frame_encoder: Arc<dyn FrameEncoderBackend>,
    pub compressor: Arc<dyn CompressorBackend>,
    pub gate: Arc<dyn GateBackend>,
    pub reasoner: Arc<dyn ReasonerBackend>,
    pub tts: Arc<dyn TtsBackend>,
}

impl Backends {
    pub fn reference(cfg: &crate::Config) -> Self {
        Self {
            asr: Arc::new(ReferenceAsr),
            frame_encoder: Arc::new(ReferenceFrameEncoder),
            compressor: Arc::new(ReferenceCompressor),
            gate: Arc::new(ReferenceGate::new(
                cfg.reasoning.fillers.iter().cloned(),
                cfg.reasoning.min_content_tokens,
            )),
            reasoner: Arc::new(ReferenceReasoner),
            tts: Arc::new(ReferenceTts::default()),
        }
    }

    /// Builds the backends named by `cfg.backends`. Wizard roles read `wizard`.
    pub fn from_config(cfg: &crate::Config, wizard: Option<&WizardData>) -> Result<Self, BackendError> {
        let mut b = Self::reference(cfg);
        let empty = WizardData::default();
        let wiz = wizard.unwrap_or(&empty);
        for role in Role::ALL {
            let d = cfg.backends.get(role);
            match d.implementation {
                Implementation::Reference => {}
                Implementation::Wizard => match role {
                    Role::Asr => b.asr = Arc::new(WizardAsr::new(wiz.utterances.clone())),
                    Role::Reasoner => b.reasoner = Arc::new(WizardReasoner::new(wiz.answers.clone())),
                    _ => {
                        return Err(BackendError::InvalidArgument(format!(
                            "no wizard implementation for {role}"
                        )))
                    }
                },
                Implementation::Remote => {
                    let client = Arc::new(remote::RemoteClient::new(role, d.clone())?);
                    match role {
                        Role::Asr => b.asr = Arc::new(remote::RemoteAsr(client)),
                        Role::FrameEncoder => b.frame_encoder = Arc::new(remote::RemoteFrameEncoder(client)),
                        Role::Compressor => b.compressor = Arc::new(remote::RemoteCompressor(client)),
                        Role::Gate => b.gate = Arc::new(remote::RemoteGate(client)),
                        Role::Reasoner => b.reasoner = Arc::new(remote::RemoteReasoner(client)),
                        Role::Tts => b.tts = Arc::new(remote::RemoteTts(client)),
                    }
                }
            }
        }
        Ok(b)
    }
}
