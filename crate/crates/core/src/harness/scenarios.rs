// SPDX-License-Identifier: Apache-2.0

//! Builders for the bundled scenario traces.
//!
//! Reference embeddings are bag-of-words hashes, so two inputs are related
//! exactly when they share tokens. Each scenario states which caption tokens
//! link the ground-truth clip to its query; every other caption is disjoint
//! from the query, which makes the expected ranking follow analytically from
//! the near-orthogonality of independent hashed vectors.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::trace::{Check, GroundTruth, Trace, TraceEvent};
use crate::backends::Utterance;
use crate::ingest::{pcm_to_bytes, SAMPLE_RATE_HZ};
use crate::perception::SoundClass;

/// Samples per period of the synthetic voice waveform (about 222 Hz).
const WAVE_PERIOD: usize = 72;
/// Peak amplitude; the triangle wave's RMS is `peak / sqrt(3)`, about 3464.
pub const WAVE_PEAK: i32 = 6000;

/// Overrides shared by the scenario traces: 4-frame clips sampled at 2 fps,
/// so clip `k` covers frames at `2000k + 500, ..., 2000k + 2000` ms.
pub const SCENARIO_CONFIG: [&str; 3] = [
    "profile.frames_per_clip=4",
    "ingest.frame_rate_fps=2.0",
    "backends.asr.implementation=\"wizard\"",
];

/// Integer triangle wave of `ms` milliseconds.
pub fn voice_wave(ms: u64) -> Vec<i16> {
    let n = (ms * u64::from(SAMPLE_RATE_HZ) / 1000) as usize;
    let half = WAVE_PERIOD as i32 / 2;
    (0..n)
        .map(|i| {
            let p = (i % WAVE_PERIOD) as i32;
            let tri = if p < half { p } else { WAVE_PERIOD as i32 - p };
            // tri in [0, half] maps linearly onto [-peak, peak].
            (WAVE_PEAK * (2 * tri - half) / half) as i16
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct TraceBuilder {
    name: String,
    events: Vec<TraceEvent>,
}

fn annotation(t_ms: u64) -> TraceEvent {
    TraceEvent::Annotation {
        t_ms,
        note: None,
        config: Vec::new(),
        utterance: None,
        answer: None,
        ground_truth: None,
    }
}

impl TraceBuilder {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            events: Vec::new(),
        }
    }

    pub fn note(mut self, text: &str) -> Self {
        let mut a = annotation(0);
        if let TraceEvent::Annotation { note, .. } = &mut a {
            *note = Some(text.into());
        }
        self.events.push(a);
        self
    }

    pub fn config(mut self, overrides: &[&str]) -> Self {
        let mut a = annotation(0);
        if let TraceEvent::Annotation { config, .. } = &mut a {
            *config = overrides.iter().map(|s| s.to_string()).collect();
        }
        self.events.push(a);
        self
    }

    /// Voiced audio over `[t_ms, t_ms + dur_ms)` plus the wizard transcript.
    pub fn speech(self, t_ms: u64, dur_ms: u64, transcript: &str) -> Self {
        self.sound(t_ms, dur_ms, SoundClass::Speech, transcript)
    }

    pub fn sound(mut self, t_ms: u64, dur_ms: u64, class: SoundClass, transcript: &str) -> Self {
        let mut a = annotation(t_ms);
        if let TraceEvent::Annotation { utterance, .. } = &mut a {
            *utterance = Some(Utterance {
                t_ms,
                t_end_ms: t_ms + dur_ms,
                class,
                transcript: transcript.into(),
            });
        }
        self.events.push(a);
        self.audio(t_ms, dur_ms)
    }

    /// Voiced audio without an annotation.
    pub fn audio(mut self, t_ms: u64, dur_ms: u64) -> Self {
        self.events.push(TraceEvent::Audio {
            t_ms,
            pcm_b64: B64.encode(pcm_to_bytes(&voice_wave(dur_ms))),
        });
        self
    }

    /// Four caption frames per clip, one clip per caption, clip `k` ending at
    /// `start_ms + 2000 (k + 1)`.
    pub fn clips(mut self, start_ms: u64, captions: &[&str]) -> Self {
        for (k, c) in captions.iter().enumerate() {
            for j in 0..4u64 {
                self.events.push(TraceEvent::Frame {
                    t_ms: start_ms + 2000 * k as u64 + 500 * (j + 1),
                    jpeg_b64: None,
                    features: None,
                    caption: Some(c.to_string()),
                });
            }
        }
        self
    }

    pub fn ground_truth(mut self, t_ms: u64, question: &str, clips: &[u64]) -> Self {
        let mut a = annotation(t_ms);
        if let TraceEvent::Annotation { ground_truth, .. } = &mut a {
            *ground_truth = Some(GroundTruth {
                question: question.into(),
                clips: clips.to_vec(),
            });
        }
        self.events.push(a);
        self
    }

    pub fn expect(mut self, t_ms: u64, id: &str, check: Check) -> Self {
        self.events.push(TraceEvent::Expect {
            t_ms,
            id: id.into(),
            check,
        });
        self
    }

    /// Sorts by time; equal times keep insertion order.
    pub fn build(mut self) -> Trace {
        self.events.sort_by_key(TraceEvent::t_ms);
        Trace::new(self.name, self.events)
    }
}

pub const WEATHER_QUESTION: &str = "How about the weather today?";
pub const SANDWICH_QUESTION: &str = "Where can I heat my sandwiches?";
pub const WHAT_IS_THIS_QUESTION: &str = "What is this";
pub const KEYS_QUESTION: &str = "Where did I leave my keys?";

pub fn weather() -> Trace {
    TraceBuilder::new("weather")
        .note(
            "An umbrella is seen early; much later the user asks about the weather. The umbrella clip's \
             caption shares the tokens 'weather' and 'today' with the question; the four later clips share \
             none, so clip 0 ranks first.",
        )
        .config(&SCENARIO_CONFIG)
        .clips(
            0,
            &[
                "umbrella rain weather today",
                "desk laptop keyboard coffee",
                "bookshelf novel lamp",
                "window street bicycle",
                "sofa cushion blanket",
            ],
        )
        .speech(10_512, 1500, WEATHER_QUESTION)
        .ground_truth(10_512, WEATHER_QUESTION, &[0])
        .expect(20_000, "umbrella-rank1", Check::RetrievedRank1 {
            question: WEATHER_QUESTION.into(),
            clip: 0,
        })
        .expect(20_000, "umbrella-retrieved", Check::RetrievedContains {
            question: WEATHER_QUESTION.into(),
            clip: 0,
        })
        .expect(20_000, "one-answer", Check::Answers { count: 1 })
        .build()
}

pub fn sandwich() -> Trace {
    TraceBuilder::new("sandwich")
        .note(
            "The user asks where to heat sandwiches. The microwave clip's caption shares 'heat' and \
             'sandwiches' with the question; the other captions share nothing with it.",
        )
        .config(&SCENARIO_CONFIG)
        .clips(
            0,
            &[
                "fridge milk eggs",
                "microwave heat sandwiches kitchen",
                "sofa television remote",
                "bedroom pillow alarm",
            ],
        )
        .speech(8_512, 1500, SANDWICH_QUESTION)
        .ground_truth(8_512, SANDWICH_QUESTION, &[1])
        .expect(20_000, "microwave-rank1", Check::RetrievedRank1 {
            question: SANDWICH_QUESTION.into(),
            clip: 1,
        })
        .expect(20_000, "one-answer", Check::Answers { count: 1 })
        .build()
}

pub fn what_is_this() -> Trace {
    TraceBuilder::new("whatisthis")
        .note(
            "'What is this' refers to the current view. With memory.recency_bonus = 2 the latest clip gains \
             2 and clip k of n gains 2/(n - k); the earlier mug clip shares 'this' and 'is' with the \
             question, yet its cosine lead stays below the bonus gap of 1.5, so the latest clip ranks first.",
        )
        .config(&SCENARIO_CONFIG)
        .config(&["memory.recency_bonus=2.0"])
        .clips(0, &["this is a red mug", "bookshelf novel lamp", "window street bicycle", "green plant pot"])
        .speech(8_512, 1000, WHAT_IS_THIS_QUESTION)
        .ground_truth(8_512, WHAT_IS_THIS_QUESTION, &[3])
        .expect(20_000, "latest-rank1", Check::RetrievedRank1 {
            question: WHAT_IS_THIS_QUESTION.into(),
            clip: 3,
        })
        .build()
}

pub fn snapshot_isolation() -> Trace {
    TraceBuilder::new("snapshot_isolation")
        .note(
            "Voice onset near 5000 ms backs up memory. A distractor clip whose caption repeats the question \
             finishes at 6000 ms, while the user is still speaking; grounding must use the backup, so only \
             clips 0 and 1 (ending at 2000 and 4000 ms) may be retrieved.",
        )
        .config(&SCENARIO_CONFIG)
        .clips(
            0,
            &[
                "keys table hallway",
                "kitchen sink dishes",
                "where did i leave my keys",
                "garden hose bucket",
                "garage car tools",
            ],
        )
        .speech(5_000, 1500, KEYS_QUESTION)
        .ground_truth(5_000, KEYS_QUESTION, &[0])
        .expect(20_000, "pre-backup-only", Check::RetrievedBefore {
            question: KEYS_QUESTION.into(),
            t_ms: 5000,
        })
        .expect(20_000, "keys-rank1", Check::RetrievedRank1 {
            question: KEYS_QUESTION.into(),
            clip: 0,
        })
        .build()
}

pub const BARGE_IN_FIRST: &str = "Describe everything you can see in the room right now?";
pub const BARGE_IN_SECOND: &str = "Wait, what color is the mug?";

pub fn barge_in() -> Trace {
    TraceBuilder::new("barge_in")
        .note(
            "The first answer is long (about 6 s of reference speech). The user talks over it at 5000 ms; \
             the client must see the interrupt before any further audio and no audio of the old generation \
             after it.",
        )
        .config(&SCENARIO_CONFIG)
        .clips(0, &["red mug desk", "window street bicycle"])
        .speech(1_008, 1500, BARGE_IN_FIRST)
        .speech(5_008, 800, BARGE_IN_SECOND)
        .expect(30_000, "interrupt-ordering", Check::InterruptBeforeStaleAudio {})
        .expect(30_000, "interrupt-latency", Check::InterruptBy { within_ms: 100 })
        .expect(30_000, "two-answers", Check::Answers { count: 2 })
        .build()
}

/// Backchannels and non-speech the gate must drop.
pub const FILLERS: [&str; 7] = ["enn...", "ok...", "", "uh", "yeah", "mm hmm", "okay okay"];

pub fn filler_suite() -> Trace {
    let mut b = TraceBuilder::new("filler_suite")
        .note("Backchannels, an empty transcript and a laugh. None may produce an answer or audio.")
        .config(&SCENARIO_CONFIG);
    let mut t = 1_008;
    for f in FILLERS {
        b = b.speech(t, 600, f);
        t += 2000;
    }
    b = b.sound(t, 600, SoundClass::Laughing, "");
    b.expect(t + 5000, "no-answers", Check::Answers { count: 0 })
        .expect(t + 5000, "no-audio", Check::AudioFrames { count: 0 })
        .expect(t + 5000, "all-ignored", Check::Ignored {
            count: FILLERS.len(),
        })
        .build()
}

pub const QUESTIONS: [&str; 5] = [
    "What is on the table?",
    "Where are my glasses?",
    "Can you read the sign?",
    "How many chairs are there?",
    "Describe the painting on the wall.",
];

pub fn question_suite() -> Trace {
    let mut b = TraceBuilder::new("question_suite")
        .note("Five answerable queries, spaced so each answer finishes before the next query.")
        .config(&SCENARIO_CONFIG)
        .clips(0, &["table lamp book", "glasses case desk"]);
    let mut t = 5_008;
    for q in QUESTIONS {
        b = b.speech(t, 1200, q);
        t += 8000;
    }
    b.expect(t, "one-answer-each", Check::Answers {
        count: QUESTIONS.len(),
    })
    .expect(t, "none-ignored", Check::Ignored { count: 0 })
    .build()
}

/// `(start_ms, duration_ms)` of each burst in the three-burst trace.
pub const THREE_BURSTS: [(u64, u64); 3] = [(1008, 800), (3008, 496), (5008, 1200)];

pub fn three_burst() -> Trace {
    let mut b = TraceBuilder::new("three_burst")
        .note(
            "Three voiced bursts separated by silence. A segment opens at its burst's first chunk and \
             closes after the full hangover of silence, so it spans [start, end + vad.hangover_ms].",
        )
        .config(&SCENARIO_CONFIG);
    for (i, (s, d)) in THREE_BURSTS.iter().enumerate() {
        b = b.speech(*s, *d, "testing the microphone");
        b = b.expect(9_000, &format!("burst-{i}"), Check::VoiceSegment {
            start_ms: *s,
            end_ms: s + d + 256,
            tolerance_ms: 16,
        });
    }
    b.expect(9_000, "three-segments", Check::VoiceSegments { count: 3 }).build()
}

/// `n` short queries for latency measurement; reference ASR, no video.
pub fn plumbing_latency(n: usize) -> Trace {
    let mut b = TraceBuilder::new("plumbing_latency").note("Short voiced bursts with reference backends only.");
    for i in 0..n as u64 {
        b = b.audio(1008 + i * 448, 128);
    }
    b.build()
}

/// Every bundled scenario, by file stem.
pub fn bundled() -> Vec<Trace> {
    vec![
        weather(),
        sandwich(),
        what_is_this(),
        snapshot_isolation(),
        barge_in(),
        filler_suite(),
        question_suite(),
        three_burst(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::rms;

    #[test]
    fn wave_is_voiced_and_bounded() {
        let w = voice_wave(100);
        assert_eq!(w.len(), 1600);
        assert!(w.iter().all(|s| (i32::from(*s)).abs() <= WAVE_PEAK));
        let r = rms(&w[..WAVE_PERIOD * 20]);
        assert!((r - f64::from(WAVE_PEAK) / 3f64.sqrt()).abs() < 20.0, "{r}");
    }

    #[test]
    fn builds_sorted_parseable_traces() {
        for t in bundled() {
            let text = t.to_jsonl();
            let back = Trace::parse(&t.name, &text).unwrap();
            assert_eq!(back.events, t.events, "{}", t.name);
            assert!(!t.expectations().is_empty(), "{}", t.name);
        }
    }
}
