// SPDX-License-Identifier: Apache-2.0

//! Media ingestion: fixed-size audio chunking, fixed-rate frame sampling and
//! the bounded queues that connect pipeline workers.

mod frames;
mod queue;

pub use frames::{sample_frames, FramePayload, FrameRef, FrameSampler, RawFrame, SamplerOutput};
pub use queue::{BoundedQueue, OverflowPolicy, PopError, PushOutcome, QueueClosed, TryPushError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SessionId;

/// Audio is 16-bit signed little-endian mono PCM at 16 kHz.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const BYTES_PER_SAMPLE: usize = 2;
/// Every non-final chunk carries exactly this many bits.
pub const CHUNK_BITS: usize = 4096;
pub const CHUNK_BYTES: usize = CHUNK_BITS / 8;
pub const CHUNK_SAMPLES: usize = CHUNK_BYTES / BYTES_PER_SAMPLE;
/// Duration of one full chunk.
pub const CHUNK_MS: u64 = (CHUNK_SAMPLES as u64 * 1000) / SAMPLE_RATE_HZ as u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("malformed PCM stream: dangling byte at offset {offset} splits a 16-bit sample")]
    MalformedStream { offset: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioChunk {
    pub session_id: SessionId,
    pub seq: u64,
    pub t_start_ms: u64,
    pub samples: Vec<i16>,
}

impl AudioChunk {
    pub fn is_full(&self) -> bool {
        self.samples.len() == CHUNK_SAMPLES
    }

    pub fn duration_ms(&self) -> u64 {
        samples_to_ms(self.samples.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        pcm_to_bytes(&self.samples)
    }

    /// RMS amplitude in PCM units.
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub fn samples_to_ms(n: usize) -> u64 {
    n as u64 * 1000 / SAMPLE_RATE_HZ as u64
}

pub fn pcm_to_bytes(samples: &[i16]) -> Vec<u8> {
    samples.iter().flat_map(|s| s.to_le_bytes()).collect()
}

pub fn bytes_to_pcm(bytes: &[u8]) -> Vec<i16> {
    bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect()
}

pub fn rms(samples: &[i16]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
    (sum / samples.len() as f64).sqrt()
}

/// Incremental chunker for one session's PCM byte stream.
///
/// Bytes may arrive in arbitrary slices; full 512-byte chunks are emitted as
/// soon as they complete and `finish` releases the trailing partial chunk.
#[derive(Debug)]
pub struct Chunker {
    session_id: SessionId,
    next_seq: u64,
    pending: Vec<u8>,
    consumed: u64,
}

impl Chunker {
    pub fn new(session_id: SessionId) -> Self {
        Self {
            session_id,
            next_seq: 0,
            pending: Vec::with_capacity(CHUNK_BYTES),
            consumed: 0,
        }
    }

    /// Total bytes accepted so far.
    pub fn bytes_consumed(&self) -> u64 {
        self.consumed
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn push(&mut self, mut bytes: &[u8]) -> Vec<AudioChunk> {
        self.consumed += bytes.len() as u64;
        let mut out = Vec::new();
        while !bytes.is_empty() {
            let take = (CHUNK_BYTES - self.pending.len()).min(bytes.len());
            self.pending.extend_from_slice(&bytes[..take]);
            bytes = &bytes[take..];
            if self.pending.len() == CHUNK_BYTES {
                out.push(self.emit());
            }
        }
        out
    }

    /// Ends the stream, returning the short final chunk if any.
    pub fn finish(&mut self) -> Result<Option<AudioChunk>, IngestError> {
        if self.pending.len() % BYTES_PER_SAMPLE != 0 {
            return Err(IngestError::MalformedStream {
                offset: self.consumed - 1,
            });
        }
        if self.pending.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.emit()))
    }

    fn emit(&mut self) -> AudioChunk {
        let seq = self.next_seq;
        self.next_seq += 1;
        let samples = bytes_to_pcm(&self.pending);
        self.pending.clear();
        AudioChunk {
            session_id: self.session_id.clone(),
            seq,
            t_start_ms: seq * CHUNK_MS,
            samples,
        }
    }
}

/// Splits a complete PCM byte stream into 4096-bit chunks.
pub fn chunk_audio(bytes: &[u8], session_id: SessionId) -> Result<Vec<AudioChunk>, IngestError> {
    if bytes.len() % BYTES_PER_SAMPLE != 0 {
        return Err(IngestError::MalformedStream {
            offset: bytes.len() as u64 - 1,
        });
    }
    let mut chunker = Chunker::new(session_id);
    let mut chunks = chunker.push(bytes);
    chunks.extend(chunker.finish()?);
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sid() -> SessionId {
        SessionId::new("s")
    }

    #[test]
    fn constants_follow_from_chunk_size() {
        assert_eq!(CHUNK_BYTES, 512);
        assert_eq!(CHUNK_SAMPLES, 256);
        assert_eq!(CHUNK_MS, 16);
    }

    #[test]
    fn kilobyte_gives_two_chunks() {
        let chunks = chunk_audio(&[7u8; 1024], sid()).unwrap();
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.to_bytes().len() == 512));
        assert_eq!(chunks[1].t_start_ms, 16);
    }

    #[test]
    fn empty_stream_gives_no_chunks() {
        assert!(chunk_audio(&[], sid()).unwrap().is_empty());
    }

    #[test]
    fn odd_length_reports_offset() {
        assert_eq!(
            chunk_audio(&[0u8; 513], sid()),
            Err(IngestError::MalformedStream { offset: 512 })
        );
    }

    #[test]
    fn incremental_odd_slices_recombine() {
        let mut c = Chunker::new(sid());
        let mut out = c.push(&[1u8; 511]);
        assert!(out.is_empty());
        out.extend(c.push(&[1u8; 3]));
        assert_eq!(out.len(), 1);
        assert_eq!(c.finish().unwrap().unwrap().samples.len(), 1);
    }

    proptest! {
        #[test]
        fn round_trip(half in proptest::collection::vec(any::<u8>(), 0..4000), splits in proptest::collection::vec(1usize..700, 0..8)) {
            let mut bytes = half.clone();
            bytes.extend_from_slice(&half);
            let chunks = chunk_audio(&bytes, sid()).unwrap();
            let rebuilt: Vec<u8> = chunks.iter().flat_map(|c| c.to_bytes()).collect();
            prop_assert_eq!(&rebuilt, &bytes);
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.seq, i as u64);
                prop_assert_eq!(c.t_start_ms, i as u64 * 16);
                if i + 1 < chunks.len() {
                    prop_assert_eq!(c.samples.len() * 16, CHUNK_BITS);
                }
            }
            // Arbitrary slicing of the same stream yields the same chunks.
            let mut c = Chunker::new(sid());
            let mut rest: &[u8] = &bytes;
            let mut inc = Vec::new();
            for s in splits {
                let n = s.min(rest.len());
                inc.extend(c.push(&rest[..n]));
                rest = &rest[n..];
            }
            inc.extend(c.push(rest));
            inc.extend(c.finish().unwrap());
            prop_assert_eq!(inc, chunks);
        }
    }
}
