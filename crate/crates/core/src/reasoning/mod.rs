// SPDX-License-Identifier: Apache-2.0

//! Reasoning: instruction gating, prompt assembly, answer generation and
//! speech synthesis dispatch.

mod generate;
mod prompt;
mod tts;

use serde::{Deserialize, Serialize};

pub use generate::{generate_answer, GeneratedAnswer, SentenceSplitter};
pub use prompt::{build_prompt, AssembledPrompt, PromptClip, PROMPT_TEMPLATE};
pub use tts::{AudioOut, TtsRequest, TtsStage};

use crate::backends::GateBackend;
use crate::SessionId;

/// Default filler lexicon: hesitations and standalone backchannels.
pub const DEFAULT_FILLERS: &[&str] = &[
    "enn", "en", "ok", "okay", "uh", "uhh", "um", "umm", "hmm", "hm", "mm", "mhm", "huh", "ah", "oh", "er", "erm",
    "yeah", "yep", "yes", "right", "sure", "alright",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Answer,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateReason {
    Filler,
    NonLinguistic,
    Instruction,
    Question,
    /// The gate backend failed; the transcript is ignored.
    BackendError,
}

impl GateReason {
    pub fn as_str(self) -> &'static str {
        match self {
            GateReason::Filler => "filler",
            GateReason::NonLinguistic => "non-linguistic",
            GateReason::Instruction => "instruction",
            GateReason::Question => "question",
            GateReason::BackendError => "backend-error",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateDecision {
    pub verdict: Verdict,
    pub reason: GateReason,
}

impl GateDecision {
    pub fn answer(reason: GateReason) -> Self {
        Self {
            verdict: Verdict::Answer,
            reason,
        }
    }

    pub fn ignore(reason: GateReason) -> Self {
        Self {
            verdict: Verdict::Ignore,
            reason,
        }
    }

    pub fn is_answer(&self) -> bool {
        self.verdict == Verdict::Answer
    }
}

/// Decides whether a transcript should be answered. Fails closed.
pub fn predict_instruction(transcript: &str, backend: &dyn GateBackend) -> GateDecision {
    match backend.predict(transcript) {
        Ok(d) => d,
        Err(e) => {
            tracing::warn!("gate backend failed, ignoring transcript: {e}");
            GateDecision::ignore(GateReason::BackendError)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerTimings {
    pub gate_ms: f64,
    pub retrieve_ms: f64,
    pub generate_ms: f64,
}

/// One answered question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerEvent {
    pub session_id: SessionId,
    pub answer_id: u64,
    pub question: String,
    pub text: String,
    /// Clips cited in the prompt; always a subset of `retrieved`.
    pub grounded: Vec<u64>,
    pub retrieved: Vec<u64>,
    pub snapshot_t_ms: u64,
    pub generation: u64,
    pub timings: AnswerTimings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}
