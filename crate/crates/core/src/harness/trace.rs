// SPDX-License-Identifier: Apache-2.0

//! Replay traces: JSONL, one event per line, sorted by `t_ms`, binary
//! payloads base64.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{hashed_vector, tokenize, ExpectedAnswer, Utterance, WizardData};
use crate::ingest::{bytes_to_pcm, FramePayload, SAMPLE_RATE_HZ};
use crate::Matrix;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("reading trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn line_err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Line {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Ground-truth clip indices for a query, used for precision@k.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub question: String,
    pub clips: Vec<u64>,
}

/// Assertions evaluated against a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    /// Every answer to `question` retrieved `clip`.
    RetrievedContains { question: String, clip: u64 },
    /// Every answer to `question` ranked `clip` first.
    RetrievedRank1 { question: String, clip: u64 },
    /// Every clip retrieved for `question` ended at or before `t_ms`.
    RetrievedBefore { question: String, t_ms: u64 },
    /// Exact number of answer messages delivered to the client.
    Answers { count: usize },
    /// Exact number of gate rejections.
    Ignored { count: usize },
    /// Exact number of outbound audio frames delivered to the client.
    AudioFrames { count: usize },
    VoiceSegments { count: usize },
    /// Some segment starts and ends within `tolerance_ms` of the given times.
    VoiceSegment {
        start_ms: u64,
        end_ms: u64,
        tolerance_ms: u64,
    },
    /// Every interrupt reached the client within `within_ms` of voice onset.
    InterruptBy { within_ms: u64 },
    /// At least one interrupt cut playback short, and after every interrupt
    /// the client saw no audio of an older generation.
    InterruptBeforeStaleAudio {},
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::RetrievedContains { .. } => "retrieved_contains",
            Check::RetrievedRank1 { .. } => "retrieved_rank1",
            Check::RetrievedBefore { .. } => "retrieved_before",
            Check::Answers { .. } => "answers",
            Check::Ignored { .. } => "ignored",
            Check::AudioFrames { .. } => "audio_frames",
            Check::VoiceSegments { .. } => "voice_segments",
            Check::VoiceSegment { .. } => "voice_segment",
            Check::InterruptBy { .. } => "interrupt_by",
            Check::InterruptBeforeStaleAudio {} => "interrupt_before_stale_audio",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceEvent {
    Audio {
        t_ms: u64,
        pcm_b64: String,
    },
    /// Exactly one of the payload fields is set. `caption` is shorthand for
    /// a replay feature matrix whose row `r` is the hashed vector of the
    /// caption's token `r mod len`.
    Frame {
        t_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jpeg_b64: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<MatrixSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        caption: Option<String>,
    },
    Annotation {
        t_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
        /// `section.key=value` config overrides applied before the run.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        config: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        utterance: Option<Utterance>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<ExpectedAnswer>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_truth: Option<GroundTruth>,
    },
    Expect {
        t_ms: u64,
        id: String,
        check: Check,
    },
}

impl TraceEvent {
    pub fn t_ms(&self) -> u64 {
        match self {
            TraceEvent::Audio { t_ms, .. }
            | TraceEvent::Frame { t_ms, .. }
            | TraceEvent::Annotation { t_ms, .. }
            | TraceEvent::Expect { t_ms, .. } => *t_ms,
        }
    }
}

/// Rows of a caption feature matrix.
pub fn caption_features(caption: &str, rows: usize, channels: usize) -> Result<Matrix, String> {
    let tokens = tokenize(caption);
    if tokens.is_empty() {
        return Err("caption has no tokens".into());
    }
    let vecs = tokens
        .iter()
        .map(|t| hashed_vector(t.as_bytes(), channels))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let data: Vec<f64> = (0..rows).flat_map(|r| vecs[r % vecs.len()].iter().copied()).collect();
    Matrix::new(rows, channels, data).map_err(|e| e.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioSpan {
    pub t_ms: u64,
    pub samples: Vec<i16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameEvent {
    pub t_ms: u64,
    pub payload: FramePayloadSpec,
}

/// Frame payload as written in the trace; captions are expanded once the
/// run's profile is known.
#[derive(Clone, Debug, PartialEq)]
pub enum FramePayloadSpec {
    Jpeg(Vec<u8>),
    Features(Matrix),
    Caption(String),
}

impl FramePayloadSpec {
    pub fn resolve(&self, tokens_per_frame: usize, channels: usize) -> Result<FramePayload, String> {
        Ok(match self {
            FramePayloadSpec::Jpeg(b) => FramePayload::Jpeg(b.clone()),
            FramePayloadSpec::Features(m) => FramePayload::Features(m.clone()),
            FramePayloadSpec::Caption(c) => FramePayload::Features(caption_features(c, tokens_per_frame, channels)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expectation {
    pub id: String,
    pub check: Check,
}

/// A parsed, validated trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub name: String,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(name: impl Into<String>, events: Vec<TraceEvent>) -> Self {
        Self {
            name: name.into(),
            events,
        }
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&name, &text)
    }

    /// Parses JSONL; blank lines are skipped. Errors carry 1-based line
    /// numbers.
    pub fn parse(name: &str, text: &str) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        let mut last_t = 0;
        let mut audio_end_ms = 0.0f64;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let ev: TraceEvent = serde_json::from_str(raw).map_err(|e| line_err(line, e.to_string()))?;
            if ev.t_ms() < last_t {
                return Err(line_err(line, format!("t_ms {} is earlier than the previous event ({last_t})", ev.t_ms())));
            }
            last_t = ev.t_ms();
            match &ev {
                TraceEvent::Audio { t_ms, pcm_b64 } => {
                    let bytes = B64.decode(pcm_b64).map_err(|e| line_err(line, format!("pcm_b64: {e}")))?;
                    if bytes.len() % 2 != 0 {
                        return Err(line_err(line, "pcm_b64 decodes to an odd byte count"));
                    }
                    if (*t_ms as f64) < audio_end_ms {
                        return Err(line_err(line, format!("audio at {t_ms} ms overlaps the previous span")));
                    }
                    audio_end_ms = *t_ms as f64 + (bytes.len() / 2) as f64 * 1000.0 / f64::from(SAMPLE_RATE_HZ);
                }
                TraceEvent::Frame {
                    jpeg_b64,
                    features,
                    caption,
                    ..
                } => {
                    let set = [jpeg_b64.is_some(), features.is_some(), caption.is_some()];
                    if set.iter().filter(|&&b| b).count() != 1 {
                        return Err(line_err(line, "frame needs exactly one of jpeg_b64, features, caption"));
                    }
                    if let Some(j) = jpeg_b64 {
                        B64.decode(j).map_err(|e| line_err(line, format!("jpeg_b64: {e}")))?;
                    }
                    if let Some(m) = features {
                        Matrix::new(m.rows, m.cols, m.data.clone()).map_err(|e| line_err(line, e.to_string()))?;
                    }
                    if let Some(c) = caption {
                        if tokenize(c).is_empty() {
                            return Err(line_err(line, "caption has no tokens"));
                        }
                    }
                }
                TraceEvent::Annotation {
                    note,
                    config,
                    utterance,
                    answer,
                    ground_truth,
                    ..
                } => {
                    if note.is_none()
                        && config.is_empty()
                        && utterance.is_none()
                        && answer.is_none()
                        && ground_truth.is_none()
                    {
                        return Err(line_err(line, "empty annotation"));
                    }
                }
                TraceEvent::Expect { id, .. } => {
                    if id.is_empty() {
                        return Err(line_err(line, "expect id must not be empty"));
                    }
                }
            }
            events.push(ev);
        }
        Ok(Self::new(name, events))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn config_overrides(&self) -> Vec<String> {
        self.events
            .iter()
            .flat_map(|e| match e {
                TraceEvent::Annotation { config, .. } => config.clone(),
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn wizard_data(&self) -> WizardData {
        let mut w = WizardData::default();
        for e in &self.events {
            if let TraceEvent::Annotation { utterance, answer, .. } = e {
                w.utterances.extend(utterance.clone());
                w.answers.extend(answer.clone());
            }
        }
        w
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Annotation { ground_truth, .. } => ground_truth.clone(),
                _ => None,
            })
            .collect()
    }

    pub fn expectations(&self) -> Vec<Expectation> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Expect { id, check, .. } => Some(Expectation {
                    id: id.clone(),
                    check: check.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn audio_spans(&self) -> Vec<AudioSpan> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Audio { t_ms, pcm_b64 } => Some(AudioSpan {
                    t_ms: *t_ms,
                    samples: bytes_to_pcm(&B64.decode(pcm_b64).expect("validated on parse")),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn frames(&self) -> Vec<FrameEvent> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Frame {
                    t_ms,
                    jpeg_b64,
                    features,
                    caption,
                } => {
                    let payload = if let Some(j) = jpeg_b64 {
                        FramePayloadSpec::Jpeg(B64.decode(j).expect("validated on parse"))
                    } else if let Some(m) = features {
                        FramePayloadSpec::Features(
                            Matrix::new(m.rows, m.cols, m.data.clone()).expect("validated on parse"),
                        )
                    } else {
                        FramePayloadSpec::Caption(caption.clone().expect("validated on parse"))
                    };
                    Some(FrameEvent { t_ms: *t_ms, payload })
                }
                _ => None,
            })
            .collect()
    }

    /// The session PCM stream: spans placed at their timestamps, gaps
    /// filled with silence.
    pub fn pcm_stream(&self) -> Vec<i16> {
        let mut out: Vec<i16> = Vec::new();
        for span in self.audio_spans() {
            let start = (span.t_ms * u64::from(SAMPLE_RATE_HZ) / 1000) as usize;
            if out.len() < start {
                out.resize(start, 0);
            }
            out.extend_from_slice(&span.samples);
        }
        out
    }

    /// Time of the last input: the end of audio or the last event.
    pub fn end_ms(&self) -> u64 {
        let audio_end = (self.pcm_stream().len() as u64 * 1000).div_ceil(u64::from(SAMPLE_RATE_HZ));
        self.events.iter().map(TraceEvent::t_ms).max().unwrap_or(0).max(audio_end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_line_numbers() {
        let text = "{\"t_ms\":0,\"kind\":\"annotation\",\"note\":\"x\"}\n\n{\"t_ms\":1,\"kind\":\"bogus\"}\n";
        let err = Trace::parse("t", text).unwrap_err();
        assert!(err.to_string().starts_with("trace line 3:"), "{err}");
    }

    #[test]
    fn rejects_unsorted_events() {
        let text = "{\"t_ms\":5,\"kind\":\"annotation\",\"note\":\"x\"}\n{\"t_ms\":1,\"kind\":\"annotation\",\"note\":\"y\"}\n";
        let err = Trace::parse("t", text).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_expect_kind_fails_loudly() {
        let text = "{\"t_ms\":0,\"kind\":\"expect\",\"id\":\"a\",\"check\":{\"telepathy\":{}}}\n";
        let err = Trace::parse("t", text).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn frame_needs_one_payload() {
        let text = "{\"t_ms\":0,\"kind\":\"frame\"}\n";
        assert!(Trace::parse("t", text).is_err());
        let text = "{\"t_ms\":0,\"kind\":\"frame\",\"caption\":\"red mug\"}\n";
        assert_eq!(Trace::parse("t", text).unwrap().frames().len(), 1);
    }

    #[test]
    fn pcm_gaps_are_silence() {
        let pcm = B64.encode([1u8, 0, 2, 0]);
        let text = format!(
            "{{\"t_ms\":0,\"kind\":\"audio\",\"pcm_b64\":\"{pcm}\"}}\n{{\"t_ms\":1,\"kind\":\"audio\",\"pcm_b64\":\"{pcm}\"}}\n"
        );
        let t = Trace::parse("t", &text).unwrap();
        let s = t.pcm_stream();
        assert_eq!(s.len(), 18);
        assert_eq!(&s[..2], &[1, 2]);
        assert!(s[2..16].iter().all(|&x| x == 0));
        assert_eq!(t.end_ms(), 2);
    }

    #[test]
    fn overlapping_audio_is_rejected() {
        let pcm = B64.encode(vec![0u8; 64]);
        let text = format!(
            "{{\"t_ms\":0,\"kind\":\"audio\",\"pcm_b64\":\"{pcm}\"}}\n{{\"t_ms\":1,\"kind\":\"audio\",\"pcm_b64\":\"{pcm}\"}}\n"
        );
        assert!(Trace::parse("t", &text).unwrap_err().to_string().contains("overlaps"));
    }

    #[test]
    fn caption_rows_cycle_tokens() {
        let m = caption_features("red mug", 3, 8).unwrap();
        assert_eq!(m.row(0), m.row(2));
        assert_ne!(m.row(0), m.row(1));
    }

    #[test]
    fn jsonl_round_trip() {
        let text = "{\"kind\":\"annotation\",\"t_ms\":0,\"config\":[\"memory.top_k=3\"]}\n{\"kind\":\"expect\",\"t_ms\":10,\"id\":\"a\",\"check\":{\"answers\":{\"count\":1}}}\n";
        let t = Trace::parse("t", text).unwrap();
        assert_eq!(t.to_jsonl(), text);
        assert_eq!(t.config_overrides(), vec!["memory.top_k=3".to_string()]);
    }
}
