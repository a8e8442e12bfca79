// SPDX-License-Identifier: Apache-2.0

//! Trace replay against an in-process pipeline.
//!
//! Virtual mode owns a [`VirtualClock`] and advances it in 16 ms ticks. At
//! each tick the due frames and the audio chunk that just completed are
//! offered, every stage runs to quiescence, and the outbound lanes are
//! drained into an ordered client log. Nothing reads the wall clock, so two
//! runs of the same trace and config produce byte-identical reports.
//!
//! Real-time mode drives a threaded [`LiveSession`] from a feeder that
//! sleeps until each input is due, optionally at a multiple of wall speed.

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::report::{build_report, ClientEntry, RunRecord, RunReport};
use super::trace::{FrameEvent, Trace};
use crate::backends::{BackendError, Backends};
use crate::clock::{Clock, SystemClock, VirtualClock};
use crate::config::ConfigError;
use crate::gateway::SessionOutput;
use crate::ingest::{pcm_to_bytes, CHUNK_MS, CHUNK_SAMPLES, SAMPLE_RATE_HZ};
use crate::pipeline::{EventLog, LiveSession, Pipeline, PipelineError};
use crate::{Config, SessionId};

/// Virtual ticks allowed after the input ends before a run is declared stuck.
const DRAIN_LIMIT_MS: u64 = 10 * 60 * 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReplayMode {
    /// Deterministic, virtual clock.
    Virtual,
    /// Wall-clock pacing at `speed` times real time.
    RealTime { speed: f64 },
}

impl ReplayMode {
    pub fn name(&self) -> &'static str {
        match self {
            ReplayMode::Virtual => "virtual",
            ReplayMode::RealTime { .. } => "real_time",
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace config: {0}")]
    Config(#[from] ConfigError),
    #[error("backend setup: {0}")]
    Backend(#[from] BackendError),
    #[error("frame at {t_ms} ms: {message}")]
    Frame { t_ms: u64, message: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("pipeline did not drain within {0} ms of the end of input")]
    Stuck(u64),
}

/// Effective config for a trace: `base` plus the trace's overrides.
pub fn trace_config(base: &Config, trace: &Trace) -> Result<Config, ConfigError> {
    Config::from_toml_str(&base.dump(), &trace.config_overrides())
}

/// Full result of a replay, for callers that need more than the report.
pub struct ReplayOutcome {
    pub report: RunReport,
    pub config: Config,
    pub events: Vec<crate::pipeline::PipelineEvent>,
    pub client: Vec<ClientEntry>,
}

pub fn replay(trace: &Trace, base: &Config, mode: ReplayMode) -> Result<RunReport, ReplayError> {
    replay_detailed(trace, base, mode).map(|o| o.report)
}

pub fn replay_detailed(trace: &Trace, base: &Config, mode: ReplayMode) -> Result<ReplayOutcome, ReplayError> {
    let cfg = trace_config(base, trace)?;
    let backends = Backends::from_config(&cfg, Some(&trace.wizard_data()))?;
    match mode {
        ReplayMode::Virtual => run_virtual(trace, cfg, backends),
        ReplayMode::RealTime { speed } => run_real_time(trace, cfg, backends, speed),
    }
}

fn resolve_frames(trace: &Trace, cfg: &Config) -> Result<Vec<(u64, crate::ingest::FramePayload)>, ReplayError> {
    trace
        .frames()
        .into_iter()
        .map(|FrameEvent { t_ms, payload }| {
            payload
                .resolve(cfg.profile.tokens_per_frame, cfg.profile.channels)
                .map(|p| (t_ms, p))
                .map_err(|message| ReplayError::Frame { t_ms, message })
        })
        .collect()
}

/// The session audio runs until the end of the trace; silence follows the
/// last span.
fn padded_pcm(trace: &Trace, end_ms: u64) -> Vec<i16> {
    let mut pcm = trace.pcm_stream();
    let total = (end_ms * u64::from(SAMPLE_RATE_HZ) / 1000) as usize;
    if pcm.len() < total {
        pcm.resize(total, 0);
    }
    pcm
}

fn session_of(trace: &Trace) -> SessionId {
    SessionId::new(if trace.name.is_empty() { "replay" } else { &trace.name })
}

fn run_virtual(trace: &Trace, cfg: Config, backends: Backends) -> Result<ReplayOutcome, ReplayError> {
    let session = session_of(trace);
    let frames = resolve_frames(trace, &cfg)?;
    let end_ms = trace.end_ms();
    let pcm = padded_pcm(trace, end_ms);

    let clock = Arc::new(VirtualClock::new(0));
    let output = SessionOutput::new(session.clone(), cfg.gateway.outbound_buffer_chunks);
    let log = Arc::new(EventLog::default());
    let cfg = Arc::new(cfg);
    let mut pipeline = Pipeline::new(session, cfg.clone(), backends, clock.clone(), output.clone(), log.clone());

    let mut client = Vec::new();
    let drain = |client: &mut Vec<ClientEntry>, t: u64| {
        while let Some(msg) = output.try_next() {
            client.push(ClientEntry { t_ms: t as f64, msg });
        }
    };

    let mut next_frame = 0;
    let mut fed = 0usize;
    let mut t = 0u64;
    loop {
        clock.advance_to(t);
        while next_frame < frames.len() && frames[next_frame].0 <= t {
            let (ft, payload) = frames[next_frame].clone();
            pipeline.push_frame(ft, payload)?;
            next_frame += 1;
        }
        let due = ((t / CHUNK_MS) as usize * CHUNK_SAMPLES).min(pcm.len());
        if due > fed {
            pipeline.push_audio_bytes(&pcm_to_bytes(&pcm[fed..due]))?;
            fed = due;
        }
        pipeline.step()?;
        drain(&mut client, t);
        if t >= end_ms && fed == pcm.len() && next_frame == frames.len() {
            break;
        }
        t += CHUNK_MS;
    }
    pipeline.finish()?;
    drain(&mut client, t);
    while let Some(w) = pipeline.next_wakeup() {
        if w > end_ms + DRAIN_LIMIT_MS {
            return Err(ReplayError::Stuck(DRAIN_LIMIT_MS));
        }
        t = t.max(w);
        clock.advance_to(t);
        pipeline.step()?;
        drain(&mut client, t);
    }

    let stats = output.stats();
    let events = log.events();
    let ground_truth = trace.ground_truth();
    let expectations = trace.expectations();
    let report = build_report(RunRecord {
        trace: &trace.name,
        mode: ReplayMode::Virtual.name(),
        speed: 1.0,
        top_k: cfg.memory.top_k,
        events: &events,
        client: &client,
        high_water: pipeline.queues().high_water(),
        stale_dropped: stats.stale_dropped,
        overflow_dropped: stats.overflow_dropped,
        ground_truth: &ground_truth,
        expectations: &expectations,
    });
    Ok(ReplayOutcome {
        report,
        config: (*cfg).clone(),
        events,
        client,
    })
}

fn sleep_until(clock: &SystemClock, t_ms: u64) {
    let now = clock.now_ms_f64();
    let ahead = t_ms as f64 - now;
    if ahead > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(ahead / 1000.0 / clock.speed()));
    }
}

fn run_real_time(trace: &Trace, cfg: Config, backends: Backends, speed: f64) -> Result<ReplayOutcome, ReplayError> {
    let session = session_of(trace);
    let frames = resolve_frames(trace, &cfg)?;
    let end_ms = trace.end_ms();
    let pcm = padded_pcm(trace, end_ms);

    let clock = Arc::new(SystemClock::with_speed(speed));
    let output = SessionOutput::new(session.clone(), cfg.gateway.outbound_buffer_chunks);
    let log = Arc::new(EventLog::default());
    let cfg = Arc::new(cfg);
    let live = LiveSession::start(session, cfg.clone(), backends, clock.clone(), output.clone(), log.clone());

    let reader = {
        let output = output.clone();
        let clock = clock.clone();
        std::thread::spawn(move || {
            let mut client = Vec::new();
            loop {
                match output.next_blocking(Duration::from_millis(50)) {
                    Some(msg) => client.push(ClientEntry {
                        t_ms: clock.now_ms_f64(),
                        msg,
                    }),
                    None if output.is_closed() => break,
                    None => {}
                }
            }
            client
        })
    };

    let mut next_frame = 0;
    let mut fed = 0usize;
    let mut t = 0u64;
    let feed = (|| -> Result<(), PipelineError> {
        loop {
            sleep_until(&clock, t);
            while next_frame < frames.len() && frames[next_frame].0 <= t {
                let (ft, payload) = frames[next_frame].clone();
                live.push_frame(ft, payload)?;
                next_frame += 1;
            }
            let due = ((t / CHUNK_MS) as usize * CHUNK_SAMPLES).min(pcm.len());
            if due > fed {
                live.push_audio_bytes(&pcm_to_bytes(&pcm[fed..due]))?;
                fed = due;
            }
            if t >= end_ms && fed == pcm.len() && next_frame == frames.len() {
                return Ok(());
            }
            t += CHUNK_MS;
        }
    })();
    let high_water = live.high_water();
    let finished = feed.and_then(|()| live.finish());
    // Let the client read the tail before the lanes close.
    while output.audio_depth() > 0 {
        std::thread::sleep(Duration::from_millis(1));
    }
    output.close();
    let client = reader.join().expect("client reader thread");
    finished?;

    let stats = output.stats();
    let events = log.events();
    let ground_truth = trace.ground_truth();
    let expectations = trace.expectations();
    let report = build_report(RunRecord {
        trace: &trace.name,
        mode: ReplayMode::RealTime { speed }.name(),
        speed,
        top_k: cfg.memory.top_k,
        events: &events,
        client: &client,
        high_water,
        stale_dropped: stats.stale_dropped,
        overflow_dropped: stats.overflow_dropped,
        ground_truth: &ground_truth,
        expectations: &expectations,
    });
    Ok(ReplayOutcome {
        report,
        config: (*cfg).clone(),
        events,
        client,
    })
}
