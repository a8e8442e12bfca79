// SPDX-License-Identifier: Apache-2.0

//! Deterministic reference implementations. All are pure functions of their
//! inputs.

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use image::{ImageFormat, RgbImage};

use super::{
    hashed_vector, tokenize, AsrBackend, AsrOutput, BackendError, CompressionInput, CompressorBackend,
    FrameEncoderBackend, GateBackend, IntegrationInput, ReasonerBackend, TtsBackend,
};
use crate::config::FeatureProfile;
use crate::ingest::{rms, SAMPLE_RATE_HZ};
use crate::matrix::normalize;
use crate::perception::SoundClass;
use crate::reasoning::{AssembledPrompt, GateDecision, GateReason};
use crate::vad::VoiceSegment;
use crate::Matrix;

/// Energy-only stand-in for a speech model: silent segments are `silence`,
/// anything else is speech with a descriptive placeholder transcript.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceAsr;

impl AsrBackend for ReferenceAsr {
    fn transcribe(&self, segment: &VoiceSegment) -> Result<AsrOutput, BackendError> {
        if rms(&segment.samples) < 1.0 {
            return Ok(AsrOutput {
                sound_class: SoundClass::Silence,
                transcript: String::new(),
            });
        }
        Ok(AsrOutput {
            sound_class: SoundClass::Speech,
            transcript: format!("speech segment of {} milliseconds", segment.duration_ms()),
        })
    }
}

/// Grid encoder: the image is split into a `g x g` grid with `g² = N`; each
/// cell's rounded mean RGB triplet `[r, g, b]` is the key of a hashed token.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceFrameEncoder;

impl ReferenceFrameEncoder {
    pub fn encode_rgb(img: &RgbImage, tokens_per_frame: usize, channels: usize) -> Result<Matrix, BackendError> {
        let side = (tokens_per_frame as f64).sqrt().round() as usize;
        if side * side != tokens_per_frame || side == 0 {
            return Err(BackendError::InvalidArgument(format!(
                "reference frame encoder needs a square token count, got {tokens_per_frame}"
            )));
        }
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(BackendError::InvalidArgument("empty image".into()));
        }
        let bounds = |i: usize, extent: usize| {
            let a = (i * extent / side).min(extent - 1);
            let b = ((i + 1) * extent / side).clamp(a + 1, extent);
            (a, b)
        };
        let mut rows = Vec::with_capacity(tokens_per_frame);
        for cy in 0..side {
            let (y0, y1) = bounds(cy, h);
            for cx in 0..side {
                let (x0, x1) = bounds(cx, w);
                let mut sum = [0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = img.get_pixel(x as u32, y as u32);
                        for c in 0..3 {
                            sum[c] += f64::from(p[c]);
                        }
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                let key = sum.map(|s| (s / n).round().clamp(0.0, 255.0) as u8);
                rows.push(hashed_vector(&key, channels).map_err(|e| BackendError::InvalidArgument(e.to_string()))?);
            }
        }
        Ok(Matrix::from_rows(&rows).expect("uniform rows"))
    }
}

impl FrameEncoderBackend for ReferenceFrameEncoder {
    fn encode(&self, jpeg: &[u8], profile: &FeatureProfile) -> Result<Matrix, BackendError> {
        let img = image::load_from_memory_with_format(jpeg, ImageFormat::Jpeg)
            .map_err(|e| BackendError::InvalidArgument(e.to_string()))?
            .to_rgb8();
        Self::encode_rgb(&img, profile.tokens_per_frame, profile.channels)
    }
}

/// Reference compressor:
/// * down-sampling: group mean of `N/P` contiguous tokens per frame;
/// * compression: `H_k` passes through, `Ĥ_k = normalize(mean(rows of F_k))`;
/// * integration: `H̄_j = normalize(mean(rows of H_j))`;
/// * question encoding: normalized mean of the hashed token vectors.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceCompressor;

impl CompressorBackend for ReferenceCompressor {
    fn compress(&self, input: CompressionInput<'_>) -> Result<(Matrix, Vec<f64>), BackendError> {
        if input.features.rows() == 0 {
            return Err(BackendError::InvalidArgument("empty clip".into()));
        }
        Ok((input.short_term.clone(), normalize(&input.features.mean_row())))
    }

    fn integrate(&self, input: &IntegrationInput<'_>) -> Result<Matrix, BackendError> {
        let rows: Vec<Vec<f64>> = input
            .short_term
            .iter()
            .map(|h| normalize(&h.mean_row()))
            .collect();
        Matrix::from_rows(&rows).map_err(|e| BackendError::InvalidArgument(e.to_string()))
    }

    fn encode_question(&self, _long_term: &Matrix, tokens: &[String], channels: usize) -> Result<Vec<f64>, BackendError> {
        if tokens.is_empty() {
            return Err(BackendError::InvalidArgument("question has no tokens".into()));
        }
        let mut acc = vec![0.0; channels];
        for t in tokens {
            let v = hashed_vector(t.as_bytes(), channels).map_err(|e| BackendError::InvalidArgument(e.to_string()))?;
            acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(normalize(&acc))
    }
}

const QUESTION_OPENERS: &[&str] = &[
    "what", "where", "when", "who", "whom", "whose", "which", "why", "how", "is", "are", "am", "was", "were", "do",
    "does", "did", "can", "could", "should", "would", "will", "shall", "may", "might", "have", "has", "had",
];

/// Lexicon gate: empty transcripts are non-linguistic; transcripts with fewer
/// than `min_content_tokens` tokens outside the filler lexicon are fillers.
#[derive(Clone, Debug)]
pub struct ReferenceGate {
    fillers: BTreeSet<String>,
    min_content_tokens: usize,
}

impl ReferenceGate {
    pub fn new(fillers: impl IntoIterator<Item = String>, min_content_tokens: usize) -> Self {
        Self {
            fillers: fillers.into_iter().map(|f| f.to_lowercase()).collect(),
            min_content_tokens,
        }
    }

    pub fn decide(&self, transcript: &str) -> GateDecision {
        let tokens = tokenize(transcript);
        if tokens.is_empty() {
            return GateDecision::ignore(GateReason::NonLinguistic);
        }
        let content: Vec<&String> = tokens.iter().filter(|t| !self.fillers.contains(*t)).collect();
        if content.len() < self.min_content_tokens {
            return GateDecision::ignore(GateReason::Filler);
        }
        let is_question = transcript.trim_end().ends_with('?') || QUESTION_OPENERS.contains(&content[0].as_str());
        GateDecision::answer(if is_question {
            GateReason::Question
        } else {
            GateReason::Instruction
        })
    }
}

impl GateBackend for ReferenceGate {
    fn predict(&self, transcript: &str) -> Result<GateDecision, BackendError> {
        Ok(self.decide(transcript))
    }
}

/// Template echo: `Answering '<question>' using clips [i, j].`, streamed one
/// word at a time.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceReasoner;

impl ReferenceReasoner {
    pub fn answer_text(prompt: &AssembledPrompt) -> String {
        let clips: Vec<String> = prompt.clip_indices().iter().map(u64::to_string).collect();
        format!("Answering '{}' using clips [{}].", prompt.question, clips.join(", "))
    }
}

impl ReasonerBackend for ReferenceReasoner {
    fn generate(
        &self,
        prompt: &AssembledPrompt,
        emit: &mut dyn FnMut(&str) -> ControlFlow<()>,
    ) -> Result<(), BackendError> {
        let text = Self::answer_text(prompt);
        for word in text.split_inclusive(' ') {
            if emit(word).is_break() {
                break;
            }
        }
        Ok(())
    }
}

pub const TTS_MS_PER_CHAR: u64 = 80;
/// 500 Hz completes exactly eight cycles per 16 ms chunk, so every chunk of
/// reference speech is identical.
pub const TTS_TONE_HZ: f64 = 500.0;
pub const TTS_TONE_AMPLITUDE: f64 = 8000.0;

/// Synthetic speech: 80 ms of a fixed tone per input character.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceTts {
    pub ms_per_char: u64,
}

impl Default for ReferenceTts {
    fn default() -> Self {
        Self {
            ms_per_char: TTS_MS_PER_CHAR,
        }
    }
}

impl TtsBackend for ReferenceTts {
    fn synthesize(&self, text: &str) -> Result<Vec<i16>, BackendError> {
        let chars = text.chars().count() as u64;
        let n = (chars * self.ms_per_char * u64::from(SAMPLE_RATE_HZ) / 1000) as usize;
        let w = 2.0 * std::f64::consts::PI * TTS_TONE_HZ / f64::from(SAMPLE_RATE_HZ);
        Ok((0..n)
            .map(|i| (TTS_TONE_AMPLITUDE * (w * (i % 32) as f64).sin()).round() as i16)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::l2_norm;

    #[test]
    fn gate_cases() {
        let gate = ReferenceGate::new(crate::reasoning::DEFAULT_FILLERS.iter().map(|s| s.to_string()), 2);
        assert_eq!(gate.decide("ok..."), GateDecision::ignore(GateReason::Filler));
        assert_eq!(gate.decide("enn..."), GateDecision::ignore(GateReason::Filler));
        assert_eq!(gate.decide(""), GateDecision::ignore(GateReason::NonLinguistic));
        assert_eq!(gate.decide("  ...  "), GateDecision::ignore(GateReason::NonLinguistic));
        assert_eq!(gate.decide("yeah"), GateDecision::ignore(GateReason::Filler));
        assert_eq!(gate.decide("hmm okay"), GateDecision::ignore(GateReason::Filler));
        assert_eq!(
            gate.decide("How about the weather today?"),
            GateDecision::answer(GateReason::Question)
        );
        assert_eq!(gate.decide("What is this"), GateDecision::answer(GateReason::Question));
        assert_eq!(
            gate.decide("turn the lights off"),
            GateDecision::answer(GateReason::Instruction)
        );
    }

    #[test]
    fn tts_chunk_arithmetic() {
        let tts = ReferenceTts::default();
        assert!(tts.synthesize("").unwrap().is_empty());
        for text in ["a", "hello", "Answering 'x' using clips []."] {
            let n = text.chars().count() as u64;
            let chunks = tts.synthesize(text).unwrap().len().div_ceil(256) as u64;
            assert_eq!(chunks, (n * 80).div_ceil(16));
        }
        let pcm = tts.synthesize("ab").unwrap();
        assert!(pcm.chunks(256).all(|c| c == &pcm[..256]));
    }

    #[test]
    fn encoder_requires_square_token_count() {
        let img = RgbImage::new(8, 8);
        assert!(ReferenceFrameEncoder::encode_rgb(&img, 12, 8).is_err());
        let m = ReferenceFrameEncoder::encode_rgb(&img, 16, 8).unwrap();
        assert_eq!((m.rows(), m.cols()), (16, 8));
    }

    #[test]
    fn tiny_images_still_cover_every_cell() {
        let img = RgbImage::from_pixel(2, 3, image::Rgb([10, 20, 30]));
        let m = ReferenceFrameEncoder::encode_rgb(&img, 16, 4).unwrap();
        let expect = hashed_vector(&[10, 20, 30], 4).unwrap();
        assert!(m.iter_rows().all(|r| r == expect.as_slice()));
    }

    #[test]
    fn question_encoding_is_unit_norm() {
        let q = ReferenceCompressor
            .encode_question(&Matrix::zeros(0, 8), &["a".into(), "b".into()], 8)
            .unwrap();
        assert!((l2_norm(&q) - 1.0).abs() < 1e-12);
    }
}
