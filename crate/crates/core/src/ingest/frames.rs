// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::{Matrix, SessionId};

/// Frame contents: an encoded image in live mode, or a precomputed feature
/// matrix when replaying a trace.
#[derive(Clone, Debug, PartialEq)]
pub enum FramePayload {
    Jpeg(Vec<u8>),
    Features(Matrix),
}

impl FramePayload {
    pub fn is_replay(&self) -> bool {
        matches!(self, FramePayload::Features(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub session_id: SessionId,
    pub seq: u64,
    pub t_ms: u64,
    pub payload: FramePayload,
}

impl RawFrame {
    pub fn frame_ref(&self) -> FrameRef {
        FrameRef {
            seq: self.seq,
            t_ms: self.t_ms,
        }
    }
}

/// Handle to a sampled source frame, carried into memory for prompt assembly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub seq: u64,
    pub t_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SamplerOutput {
    Frame(RawFrame),
    /// The source went silent for longer than the stall threshold.
    Stalled { gap_ms: u64, t_ms: u64 },
}

/// Fixed-rate sampler over a timestamped frame source.
///
/// Ticks are anchored at the first source frame and spaced `1000 / rate_fps`
/// ms apart. For each tick the first source frame at or after the tick is
/// emitted with its own capture timestamp, so emitted timestamps sit within
/// one source period of the tick grid.
#[derive(Debug)]
pub struct FrameSampler {
    session_id: SessionId,
    period_ms: u64,
    stall_threshold_ms: u64,
    next_tick: Option<u64>,
    last_source_t: Option<u64>,
    next_seq: u64,
}

impl FrameSampler {
    pub fn new(session_id: SessionId, rate_fps: f64, stall_threshold_ms: u64) -> Self {
        let period_ms = (1000.0 / rate_fps).round().max(1.0) as u64;
        Self {
            session_id,
            period_ms,
            stall_threshold_ms,
            next_tick: None,
            last_source_t: None,
            next_seq: 0,
        }
    }

    pub fn period_ms(&self) -> u64 {
        self.period_ms
    }

    /// Offers one source frame. Frames that do not advance time are ignored.
    pub fn offer(&mut self, t_ms: u64, payload: FramePayload) -> Vec<SamplerOutput> {
        let mut out = Vec::new();
        if let Some(last) = self.last_source_t {
            if t_ms <= last {
                return out;
            }
            let gap = t_ms - last;
            if gap > self.stall_threshold_ms {
                out.push(SamplerOutput::Stalled { gap_ms: gap, t_ms });
            }
        }
        self.last_source_t = Some(t_ms);
        let due = self.next_tick.is_none_or(|tick| t_ms >= tick);
        if due {
            let mut tick = self.next_tick.unwrap_or(t_ms);
            while tick <= t_ms {
                tick += self.period_ms;
            }
            self.next_tick = Some(tick);
            let seq = self.next_seq;
            self.next_seq += 1;
            out.push(SamplerOutput::Frame(RawFrame {
                session_id: self.session_id.clone(),
                seq,
                t_ms,
                payload,
            }));
        }
        out
    }
}

/// Runs a whole source through a fresh sampler.
pub fn sample_frames<I>(session_id: SessionId, source: I, rate_fps: f64, stall_threshold_ms: u64) -> Vec<SamplerOutput>
where
    I: IntoIterator<Item = (u64, FramePayload)>,
{
    let mut sampler = FrameSampler::new(session_id, rate_fps, stall_threshold_ms);
    source
        .into_iter()
        .flat_map(|(t, p)| sampler.offer(t, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(out: &[SamplerOutput]) -> Vec<&RawFrame> {
        out.iter()
            .filter_map(|o| match o {
                SamplerOutput::Frame(f) => Some(f),
                _ => None,
            })
            .collect()
    }

    fn blank() -> FramePayload {
        FramePayload::Jpeg(Vec::new())
    }

    #[test]
    fn thirty_fps_for_ten_seconds() {
        let src = (0..300).map(|i| ((i as f64 * 1000.0 / 30.0).round() as u64, blank()));
        let out = sample_frames(SessionId::new("s"), src, 1.0, 5000);
        let f = frames(&out);
        assert_eq!(f.len(), 10);
        for (i, fr) in f.iter().enumerate() {
            assert_eq!(fr.seq, i as u64);
            let tick = i as u64 * 1000;
            assert!(fr.t_ms >= tick && fr.t_ms - tick <= 34, "frame {i} at {}", fr.t_ms);
        }
    }

    #[test]
    fn single_frame_source() {
        let out = sample_frames(SessionId::new("s"), [(42, blank())], 1.0, 5000);
        assert_eq!(frames(&out).len(), 1);
    }

    #[test]
    fn replay_timestamps_pass_through_exactly() {
        let src = [0u64, 1000, 2000].map(|t| (t, FramePayload::Features(Matrix::zeros(1, 2))));
        let out = sample_frames(SessionId::new("s"), src, 1.0, 5000);
        let ts: Vec<u64> = frames(&out).iter().map(|f| f.t_ms).collect();
        assert_eq!(ts, [0, 1000, 2000]);
    }

    #[test]
    fn stall_is_reported_without_synthetic_frames() {
        let src = [0u64, 1000, 9000].map(|t| (t, blank()));
        let out = sample_frames(SessionId::new("s"), src, 1.0, 3000);
        assert_eq!(out.len(), 4);
        assert_eq!(out[2], SamplerOutput::Stalled { gap_ms: 8000, t_ms: 9000 });
        assert_eq!(frames(&out).len(), 3);
    }

    #[test]
    fn non_advancing_frames_are_ignored() {
        let mut s = FrameSampler::new(SessionId::new("s"), 1.0, 5000);
        assert_eq!(s.offer(1000, blank()).len(), 1);
        assert!(s.offer(1000, blank()).is_empty());
        assert!(s.offer(500, blank()).is_empty());
    }
}
