// SPDX-License-Identifier: Apache-2.0

//! Deterministic replay, bundled scenarios and run metrics.

mod replay;
mod report;
pub mod scenarios;
mod trace;

pub use replay::{replay, replay_detailed, trace_config, ReplayError, ReplayMode, ReplayOutcome};
pub use report::{
    build_report, evaluate, event_log_hash, measure, nearest_rank, ClientEntry, ClipReport, ExpectVerdict,
    InterruptReport, Metrics, OutputReport, QueryReport, RunRecord, RunReport, SegmentReport, Summary,
};
pub use trace::{
    caption_features, AudioSpan, Check, Expectation, FrameEvent, FramePayloadSpec, GroundTruth, MatrixSpec, Trace,
    TraceError, TraceEvent,
};
