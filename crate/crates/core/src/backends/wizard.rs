// SPDX-License-Identifier: Apache-2.0

//! Wizard backends answer from ground truth recorded in a replay trace.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::{AsrBackend, AsrOutput, BackendError, ReasonerBackend, ReferenceReasoner};
use crate::perception::SoundClass;
use crate::reasoning::AssembledPrompt;
use crate::vad::VoiceSegment;

/// Annotated utterance: what the audio between `t_ms` and `t_end_ms` says.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub t_ms: u64,
    pub t_end_ms: u64,
    pub class: SoundClass,
    #[serde(default)]
    pub transcript: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedAnswer {
    pub question: String,
    pub answer: String,
}

/// Returns the annotation overlapping the segment the most; ties go to the
/// earlier annotation. Segments with no overlapping annotation are silence.
#[derive(Clone, Debug, Default)]
pub struct WizardAsr {
    utterances: Vec<Utterance>,
}

impl WizardAsr {
    pub fn new(mut utterances: Vec<Utterance>) -> Self {
        utterances.sort_by_key(|u| (u.t_ms, u.t_end_ms));
        Self { utterances }
    }
}

impl AsrBackend for WizardAsr {
    fn transcribe(&self, segment: &VoiceSegment) -> Result<AsrOutput, BackendError> {
        let mut best: Option<(&Utterance, u64)> = None;
        for u in &self.utterances {
            let lo = u.t_ms.max(segment.t_start_ms);
            let hi = u.t_end_ms.min(segment.t_end_ms);
            let overlap = hi.saturating_sub(lo);
            if overlap > 0 && best.is_none_or(|(_, o)| overlap > o) {
                best = Some((u, overlap));
            }
        }
        Ok(match best {
            Some((u, _)) => AsrOutput {
                sound_class: u.class.clone(),
                transcript: u.transcript.clone(),
            },
            None => AsrOutput {
                sound_class: SoundClass::Silence,
                transcript: String::new(),
            },
        })
    }
}

/// Replies with the annotated answer for a question (matched verbatim after
/// trimming); unannotated questions fall back to the reference reasoner.
#[derive(Clone, Debug, Default)]
pub struct WizardReasoner {
    answers: BTreeMap<String, String>,
}

impl WizardReasoner {
    pub fn new(answers: Vec<ExpectedAnswer>) -> Self {
        Self {
            answers: answers
                .into_iter()
                .map(|a| (a.question.trim().to_string(), a.answer))
                .collect(),
        }
    }
}

impl ReasonerBackend for WizardReasoner {
    fn generate(
        &self,
        prompt: &AssembledPrompt,
        emit: &mut dyn FnMut(&str) -> ControlFlow<()>,
    ) -> Result<(), BackendError> {
        let Some(answer) = self.answers.get(prompt.question.trim()) else {
            return ReferenceReasoner.generate(prompt, emit);
        };
        for word in answer.split_inclusive(' ') {
            if emit(word).is_break() {
                break;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SessionId;

    fn seg(a: u64, b: u64) -> VoiceSegment {
        VoiceSegment {
            id: 0,
            session_id: SessionId::new("s"),
            t_start_ms: a,
            t_end_ms: b,
            samples: Vec::new(),
        }
    }

    #[test]
    fn picks_overlapping_annotation() {
        let w = WizardAsr::new(vec![
            Utterance {
                t_ms: 0,
                t_end_ms: 1000,
                class: SoundClass::Speech,
                transcript: "what is this".into(),
            },
            Utterance {
                t_ms: 3000,
                t_end_ms: 4000,
                class: SoundClass::Raining,
                transcript: String::new(),
            },
        ]);
        assert_eq!(w.transcribe(&seg(10, 1300)).unwrap().transcript, "what is this");
        assert_eq!(w.transcribe(&seg(2900, 4300)).unwrap().sound_class, SoundClass::Raining);
        assert_eq!(w.transcribe(&seg(1500, 2000)).unwrap().sound_class, SoundClass::Silence);
    }
}
