// SPDX-License-Identifier: Apache-2.0

use std::ops::ControlFlow;

use super::AssembledPrompt;
use crate::backends::{BackendError, ReasonerBackend};

const SENTENCE_END: &[char] = &['.', '!', '?', ';'];

/// Cuts streamed text into sentences. A sentence closes at `.`, `!`, `?` or
/// `;` followed by whitespace; [`SentenceSplitter::finish`] flushes the rest.
#[derive(Clone, Debug, Default)]
pub struct SentenceSplitter {
    buf: String,
}

impl SentenceSplitter {
    pub fn push(&mut self, increment: &str) -> Vec<String> {
        self.buf.push_str(increment);
        let mut out = Vec::new();
        loop {
            let cut = self
                .buf
                .char_indices()
                .zip(self.buf.chars().skip(1))
                .find(|((_, c), next)| SENTENCE_END.contains(c) && next.is_whitespace())
                .map(|((i, c), _)| i + c.len_utf8());
            let Some(cut) = cut else { break };
            let sentence = self.buf[..cut].trim().to_string();
            self.buf.drain(..cut);
            if !sentence.is_empty() {
                out.push(sentence);
            }
        }
        out
    }

    pub fn finish(&mut self) -> Option<String> {
        let rest = std::mem::take(&mut self.buf);
        let rest = rest.trim();
        (!rest.is_empty()).then(|| rest.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratedAnswer {
    pub text: String,
    /// Set when the backend failed; `text` holds whatever arrived first.
    pub error: Option<BackendError>,
    /// The sentence sink asked generation to stop.
    pub cancelled: bool,
}

/// Runs the reasoner, handing each completed sentence to `on_sentence` (or
/// the whole answer at the end when `sentence_streaming` is off). A break
/// from `on_sentence` stops generation.
pub fn generate_answer(
    prompt: &AssembledPrompt,
    backend: &dyn ReasonerBackend,
    sentence_streaming: bool,
    on_sentence: &mut dyn FnMut(&str) -> ControlFlow<()>,
) -> GeneratedAnswer {
    let mut text = String::new();
    let mut splitter = SentenceSplitter::default();
    let mut cancelled = false;
    let result = backend.generate(prompt, &mut |inc: &str| {
        text.push_str(inc);
        if sentence_streaming {
            for s in splitter.push(inc) {
                if on_sentence(&s).is_break() {
                    cancelled = true;
                    return ControlFlow::Break(());
                }
            }
        }
        ControlFlow::Continue(())
    });
    if !cancelled {
        let tail = if sentence_streaming {
            splitter.finish()
        } else {
            let t = text.trim();
            (!t.is_empty()).then(|| t.to_string())
        };
        if let Some(t) = tail {
            cancelled = on_sentence(&t).is_break();
        }
    }
    GeneratedAnswer {
        text: text.trim().to_string(),
        error: result.err(),
        cancelled,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ReferenceReasoner;
    use crate::reasoning::build_prompt;

    struct Scripted(Vec<&'static str>, bool);
    impl ReasonerBackend for Scripted {
        fn generate(
            &self,
            _: &AssembledPrompt,
            emit: &mut dyn FnMut(&str) -> ControlFlow<()>,
        ) -> Result<(), BackendError> {
            for w in &self.0 {
                if emit(w).is_break() {
                    return Ok(());
                }
            }
            if self.1 {
                return Err(BackendError::Timeout {
                    role: crate::backends::Role::Reasoner,
                    after_ms: 10,
                });
            }
            Ok(())
        }
    }

    #[test]
    fn splitter_boundaries() {
        let mut s = SentenceSplitter::default();
        assert!(s.push("It costs 3.5").is_empty());
        assert!(s.push(" dollars.").is_empty());
        assert_eq!(s.push(" Yes! And"), vec!["It costs 3.5 dollars.", "Yes!"]);
        assert_eq!(s.push(" then; ok"), vec!["And then;"]);
        assert_eq!(s.finish().as_deref(), Some("ok"));
        assert_eq!(s.finish(), None);
    }

    #[test]
    fn reference_answer_text() {
        let p = build_prompt("what is this", &[]);
        let mut sentences = Vec::new();
        let a = generate_answer(&p, &ReferenceReasoner, true, &mut |s| {
            sentences.push(s.to_string());
            ControlFlow::Continue(())
        });
        assert_eq!(a.text, "Answering 'what is this' using clips [].");
        assert_eq!(sentences, vec![a.text.clone()]);
    }

    #[test]
    fn partial_answer_flushed_on_timeout() {
        let p = build_prompt("q", &[]);
        let mut sentences = Vec::new();
        let a = generate_answer(&p, &Scripted(vec!["One. ", "Two"], true), true, &mut |s| {
            sentences.push(s.to_string());
            ControlFlow::Continue(())
        });
        assert!(a.error.is_some());
        assert_eq!(sentences, vec!["One.", "Two"]);
        assert_eq!(a.text, "One. Two");
    }

    #[test]
    fn whole_answer_mode_and_cancel() {
        let p = build_prompt("q", &[]);
        let mut n = 0;
        let a = generate_answer(&p, &Scripted(vec!["A. ", "B. ", "C."], false), false, &mut |_| {
            n += 1;
            ControlFlow::Continue(())
        });
        assert_eq!((n, a.text.as_str()), (1, "A. B. C."));
        let a = generate_answer(&p, &Scripted(vec!["A. ", "B. ", "C."], false), true, &mut |_| {
            ControlFlow::Break(())
        });
        assert!(a.cancelled);
        assert_eq!(a.text, "A.");
    }
}
