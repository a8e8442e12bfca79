// SPDX-License-Identifier: Apache-2.0

//! Run reports, expectation verdicts and aggregate metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trace::{Check, Expectation, GroundTruth};
use crate::gateway::{JsonMessage, Outbound};
use crate::pipeline::PipelineEvent;

/// One message as the client received it, stamped with the session clock.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientEntry {
    pub t_ms: f64,
    pub msg: Outbound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub segment_id: u64,
    pub text: String,
    pub verdict: String,
    pub reason: Option<String>,
    /// Session time at which the voice front end closed the segment.
    pub voice_end_ms: u64,
    pub answer_id: Option<u64>,
    pub answer: Option<String>,
    pub retrieved: Vec<u64>,
    pub snapshot_t_ms: Option<u64>,
    pub gate_ms: Option<f64>,
    pub retrieve_ms: Option<f64>,
    pub generate_ms: Option<f64>,
    /// Voice end to the first audio frame of this answer at the client.
    pub first_audio_ms: Option<f64>,
    pub precision_at_k: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterruptReport {
    pub generation: u64,
    pub onset_ms: u64,
    pub delivered_ms: f64,
    pub latency_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment_id: u64,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipReport {
    pub clip_index: u64,
    pub t_end_ms: u64,
    pub degraded: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputReport {
    pub transcripts: usize,
    pub answers: usize,
    pub interrupts: usize,
    pub audio_frames: usize,
    /// Audio frames of an older generation seen after an interrupt.
    pub stale_audio_after_interrupt: usize,
    pub status: BTreeMap<String, usize>,
    pub stale_dropped: u64,
    pub overflow_dropped: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectVerdict {
    pub id: String,
    pub check: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub trace: String,
    pub mode: String,
    /// Clock speed relative to wall time; latencies are in wall-clock ms.
    pub speed: f64,
    pub top_k: usize,
    pub queries: Vec<QueryReport>,
    pub interrupts: Vec<InterruptReport>,
    pub voice_segments: Vec<SegmentReport>,
    pub clips: Vec<ClipReport>,
    pub queue_high_water: BTreeMap<String, usize>,
    pub output: OutputReport,
    pub expects: Vec<ExpectVerdict>,
    /// SHA-256 of the pipeline event log as JSON lines.
    pub event_log_sha256: String,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn all_passed(&self) -> bool {
        self.expects.iter().all(|v| v.pass)
    }

    pub fn failures(&self) -> Vec<&ExpectVerdict> {
        self.expects.iter().filter(|v| !v.pass).collect()
    }
}

/// Everything a report is built from.
pub struct RunRecord<'a> {
    pub trace: &'a str,
    pub mode: &'a str,
    pub speed: f64,
    pub top_k: usize,
    pub events: &'a [PipelineEvent],
    pub client: &'a [ClientEntry],
    pub high_water: BTreeMap<String, usize>,
    pub stale_dropped: u64,
    pub overflow_dropped: u64,
    pub ground_truth: &'a [GroundTruth],
    pub expectations: &'a [Expectation],
}

pub fn event_log_hash(events: &[PipelineEvent]) -> String {
    let mut h = Sha256::new();
    for e in events {
        h.update(serde_json::to_vec(e).expect("events serialize"));
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}

fn precision_at_k(retrieved: &[u64], truth: &[u64], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = retrieved.iter().take(k).filter(|c| truth.contains(c)).count();
    hits as f64 / k as f64
}

pub fn build_report(r: RunRecord<'_>) -> RunReport {
    let scale = 1.0 / r.speed;
    let mut voice_end: BTreeMap<u64, u64> = BTreeMap::new();
    let mut segments = Vec::new();
    let mut clips = Vec::new();
    let mut queries: Vec<QueryReport> = Vec::new();
    for e in r.events {
        match e {
            PipelineEvent::VoiceEnd {
                t_ms,
                segment_id,
                t_start_ms,
                t_end_ms,
            } => {
                voice_end.insert(*segment_id, *t_ms);
                segments.push(SegmentReport {
                    segment_id: *segment_id,
                    t_start_ms: *t_start_ms,
                    t_end_ms: *t_end_ms,
                });
            }
            PipelineEvent::ClipIngested {
                clip_index,
                t_end_ms,
                degraded,
                ..
            } => clips.push(ClipReport {
                clip_index: *clip_index,
                t_end_ms: *t_end_ms,
                degraded: *degraded,
            }),
            PipelineEvent::Gate {
                segment_id,
                text,
                decision,
                ..
            } => queries.push(QueryReport {
                segment_id: *segment_id,
                text: text.clone(),
                verdict: if decision.is_answer() { "answer" } else { "ignore" }.into(),
                reason: Some(decision.reason.as_str().to_string()),
                voice_end_ms: voice_end.get(segment_id).copied().unwrap_or_default(),
                answer_id: None,
                answer: None,
                retrieved: Vec::new(),
                snapshot_t_ms: None,
                gate_ms: None,
                retrieve_ms: None,
                generate_ms: None,
                first_audio_ms: None,
                precision_at_k: None,
            }),
            PipelineEvent::Answer { segment_id, answer, .. } => {
                if let Some(q) = queries.iter_mut().rev().find(|q| q.segment_id == *segment_id) {
                    q.answer_id = Some(answer.answer_id);
                    q.answer = Some(answer.text.clone());
                    q.retrieved = answer.retrieved.clone();
                    q.snapshot_t_ms = Some(answer.snapshot_t_ms);
                    q.gate_ms = Some(answer.timings.gate_ms * scale);
                    q.retrieve_ms = Some(answer.timings.retrieve_ms * scale);
                    q.generate_ms = Some(answer.timings.generate_ms * scale);
                    q.precision_at_k = r
                        .ground_truth
                        .iter()
                        .find(|g| g.question.trim() == q.text.trim())
                        .map(|g| precision_at_k(&q.retrieved, &g.clips, r.top_k));
                }
            }
            _ => {}
        }
    }

    let mut first_audio: BTreeMap<u64, f64> = BTreeMap::new();
    let mut output = OutputReport {
        stale_dropped: r.stale_dropped,
        overflow_dropped: r.overflow_dropped,
        ..OutputReport::default()
    };
    let mut interrupts = Vec::new();
    let mut generation = 0;
    for entry in r.client {
        match &entry.msg {
            Outbound::Audio(a) => {
                output.audio_frames += 1;
                if a.generation < generation {
                    output.stale_audio_after_interrupt += 1;
                }
                first_audio.entry(a.answer_id).or_insert(entry.t_ms);
            }
            Outbound::Json(m) => match m {
                JsonMessage::Transcript { .. } => output.transcripts += 1,
                JsonMessage::Answer { .. } => output.answers += 1,
                JsonMessage::Interrupt {
                    generation: g, t_ms, ..
                } => {
                    output.interrupts += 1;
                    generation = generation.max(*g);
                    interrupts.push(InterruptReport {
                        generation: *g,
                        onset_ms: *t_ms,
                        delivered_ms: entry.t_ms,
                        latency_ms: (entry.t_ms - *t_ms as f64) * scale,
                    });
                }
                JsonMessage::Status { code, .. } => *output.status.entry(code.clone()).or_default() += 1,
                _ => {}
            },
        }
    }
    for q in &mut queries {
        if let Some(id) = q.answer_id {
            q.first_audio_ms = first_audio.get(&id).map(|t| (t - q.voice_end_ms as f64) * scale);
        }
    }

    let mut report = RunReport {
        trace: r.trace.to_string(),
        mode: r.mode.to_string(),
        speed: r.speed,
        top_k: r.top_k,
        queries,
        interrupts,
        voice_segments: segments,
        clips,
        queue_high_water: r.high_water,
        output,
        expects: Vec::new(),
        event_log_sha256: event_log_hash(r.events),
    };
    report.expects = r
        .expectations
        .iter()
        .map(|x| evaluate(x, &report, r.client))
        .collect();
    report
}

fn verdict(x: &Expectation, pass: bool, detail: String) -> ExpectVerdict {
    ExpectVerdict {
        id: x.id.clone(),
        check: x.check.name().to_string(),
        pass,
        detail,
    }
}

fn answered<'a>(report: &'a RunReport, question: &str) -> Vec<&'a QueryReport> {
    report
        .queries
        .iter()
        .filter(|q| q.answer_id.is_some() && q.text.trim() == question.trim())
        .collect()
}

fn count_check(x: &Expectation, what: &str, got: usize, want: usize) -> ExpectVerdict {
    verdict(x, got == want, format!("{what}: expected {want}, got {got}"))
}

pub fn evaluate(x: &Expectation, report: &RunReport, client: &[ClientEntry]) -> ExpectVerdict {
    match &x.check {
        Check::RetrievedContains { question, clip } | Check::RetrievedRank1 { question, clip } => {
            let rank1 = matches!(x.check, Check::RetrievedRank1 { .. });
            let qs = answered(report, question);
            if qs.is_empty() {
                return verdict(x, false, format!("no answer to {question:?}"));
            }
            let ok = qs.iter().all(|q| {
                if rank1 {
                    q.retrieved.first() == Some(clip)
                } else {
                    q.retrieved.contains(clip)
                }
            });
            let got: Vec<&Vec<u64>> = qs.iter().map(|q| &q.retrieved).collect();
            verdict(x, ok, format!("want clip {clip}, retrieved {got:?}"))
        }
        Check::RetrievedBefore { question, t_ms } => {
            let qs = answered(report, question);
            if qs.is_empty() {
                return verdict(x, false, format!("no answer to {question:?}"));
            }
            let end_of = |c: u64| report.clips.iter().find(|r| r.clip_index == c).map(|r| r.t_end_ms);
            let late: Vec<u64> = qs
                .iter()
                .flat_map(|q| q.retrieved.iter().copied())
                .filter(|&c| end_of(c).is_none_or(|t| t > *t_ms))
                .collect();
            let got: Vec<&Vec<u64>> = qs.iter().map(|q| &q.retrieved).collect();
            verdict(
                x,
                late.is_empty() && qs.iter().all(|q| q.snapshot_t_ms.is_some_and(|s| s <= *t_ms)),
                format!("retrieved {got:?}; clips ending after {t_ms} ms: {late:?}"),
            )
        }
        Check::Answers { count } => count_check(x, "answers", report.output.answers, *count),
        Check::Ignored { count } => count_check(
            x,
            "ignored",
            report.queries.iter().filter(|q| q.verdict == "ignore").count(),
            *count,
        ),
        Check::AudioFrames { count } => count_check(x, "audio frames", report.output.audio_frames, *count),
        Check::VoiceSegments { count } => count_check(x, "voice segments", report.voice_segments.len(), *count),
        Check::VoiceSegment {
            start_ms,
            end_ms,
            tolerance_ms,
        } => {
            let hit = report.voice_segments.iter().find(|s| {
                s.t_start_ms.abs_diff(*start_ms) <= *tolerance_ms && s.t_end_ms.abs_diff(*end_ms) <= *tolerance_ms
            });
            let all: Vec<(u64, u64)> = report.voice_segments.iter().map(|s| (s.t_start_ms, s.t_end_ms)).collect();
            verdict(
                x,
                hit.is_some(),
                format!("want [{start_ms}, {end_ms}] ± {tolerance_ms} ms, segments {all:?}"),
            )
        }
        Check::InterruptBy { within_ms } => {
            let worst = report.interrupts.iter().map(|i| i.latency_ms).fold(None, |m: Option<f64>, l| {
                Some(m.map_or(l, |m| m.max(l)))
            });
            match worst {
                None => verdict(x, false, "no interrupt delivered".into()),
                Some(w) => verdict(x, w <= *within_ms as f64, format!("worst interrupt latency {w} ms")),
            }
        }
        Check::InterruptBeforeStaleAudio {} => {
            let mut generation = 0;
            let mut cut_playback = 0;
            let mut stale_after = 0;
            let mut played_older = false;
            for e in client {
                match &e.msg {
                    Outbound::Audio(a) => {
                        if a.generation < generation {
                            stale_after += 1;
                        } else {
                            played_older = true;
                        }
                    }
                    Outbound::Json(JsonMessage::Interrupt { generation: g, .. }) => {
                        if played_older {
                            cut_playback += 1;
                        }
                        played_older = false;
                        generation = generation.max(*g);
                    }
                    _ => {}
                }
            }
            verdict(
                x,
                cut_playback > 0 && stale_after == 0,
                format!("{cut_playback} interrupt(s) during playback, {stale_after} stale frame(s) after an interrupt"),
            )
        }
    }
}

/// Nearest-rank percentile summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
    pub mean: f64,
}

/// The `p`-th percentile by the nearest-rank method: the value at 1-based
/// rank `ceil(p/100 * n)` of the sorted sample. `None` for an empty sample.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(n) - 1])
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            p50: nearest_rank(&v, 50.0)?,
            p95: nearest_rank(&v, 95.0)?,
            max: *v.last()?,
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    pub answered: usize,
    pub ignored: usize,
    pub first_audio_ms: Option<Summary>,
    pub gate_ms: Option<Summary>,
    pub retrieve_ms: Option<Summary>,
    pub generate_ms: Option<Summary>,
    pub interrupt_ms: Option<Summary>,
    /// Mean precision@k over queries with ground truth.
    pub precision_at_k: Option<f64>,
    pub expects_passed: usize,
    pub expects_failed: usize,
}

pub fn measure(report: &RunReport) -> Metrics {
    let q = &report.queries;
    let precisions: Vec<f64> = q.iter().filter_map(|q| q.precision_at_k).collect();
    Metrics {
        queries: q.len(),
        answered: q.iter().filter(|q| q.answer_id.is_some()).count(),
        ignored: q.iter().filter(|q| q.verdict == "ignore").count(),
        first_audio_ms: Summary::of(q.iter().filter_map(|q| q.first_audio_ms)),
        gate_ms: Summary::of(q.iter().filter_map(|q| q.gate_ms)),
        retrieve_ms: Summary::of(q.iter().filter_map(|q| q.retrieve_ms)),
        generate_ms: Summary::of(q.iter().filter_map(|q| q.generate_ms)),
        interrupt_ms: Summary::of(report.interrupts.iter().map(|i| i.latency_ms)),
        precision_at_k: if precisions.is_empty() {
            None
        } else {
            Some(precisions.iter().sum::<f64>() / precisions.len() as f64)
        },
        expects_passed: report.expects.iter().filter(|v| v.pass).count(),
        expects_failed: report.expects.iter().filter(|v| !v.pass).count(),
    }
}
