// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, TtsBackend};
use crate::ingest::CHUNK_SAMPLES;

/// One sentence queued for synthesis, stamped with the interrupt generation
/// current when its answer started.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtsRequest {
    pub answer_id: u64,
    pub generation: u64,
    pub text: String,
}

/// One outbound 16 ms chunk of synthesized speech.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AudioOut {
    pub answer_id: u64,
    pub generation: u64,
    /// Restarts at 0 for every generation.
    pub seq: u32,
    pub samples: Vec<i16>,
}

/// TTS worker state: the outbound sequence counter of the latest generation.
#[derive(Clone, Debug, Default)]
pub struct TtsStage {
    generation: u64,
    next_seq: u32,
}

impl TtsStage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Synthesizes `req` into chunks unless it belongs to a generation older
    /// than `current_generation`, in which case nothing is produced.
    pub fn synthesize_and_dispatch(
        &mut self,
        req: &TtsRequest,
        backend: &dyn TtsBackend,
        current_generation: u64,
    ) -> Result<Vec<AudioOut>, BackendError> {
        let live = current_generation.max(self.generation);
        if req.generation < live {
            return Ok(Vec::new());
        }
        if req.generation > self.generation {
            self.generation = req.generation;
            self.next_seq = 0;
        }
        let pcm = backend.synthesize(&req.text)?;
        Ok(pcm
            .chunks(CHUNK_SAMPLES)
            .map(|c| {
                let seq = self.next_seq;
                self.next_seq += 1;
                AudioOut {
                    answer_id: req.answer_id,
                    generation: req.generation,
                    seq,
                    samples: c.to_vec(),
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ReferenceTts;

    fn req(generation: u64, text: &str) -> TtsRequest {
        TtsRequest {
            answer_id: 1,
            generation,
            text: text.into(),
        }
    }

    #[test]
    fn chunk_count_and_seq() {
        let mut st = TtsStage::new();
        let out = st.synthesize_and_dispatch(&req(0, "hello"), &ReferenceTts::default(), 0).unwrap();
        assert_eq!(out.len(), 25);
        assert!(out.windows(2).all(|w| w[1].seq == w[0].seq + 1));
        let more = st.synthesize_and_dispatch(&req(0, "x"), &ReferenceTts::default(), 0).unwrap();
        assert_eq!(more[0].seq, 25);
        assert!(st.synthesize_and_dispatch(&req(0, ""), &ReferenceTts::default(), 0).unwrap().is_empty());
    }

    #[test]
    fn stale_generation_is_dropped() {
        let mut st = TtsStage::new();
        assert!(st.synthesize_and_dispatch(&req(0, "old"), &ReferenceTts::default(), 1).unwrap().is_empty());
        let new = st.synthesize_and_dispatch(&req(1, "new"), &ReferenceTts::default(), 1).unwrap();
        assert_eq!(new[0].seq, 0);
        assert!(st.synthesize_and_dispatch(&req(0, "late"), &ReferenceTts::default(), 0).unwrap().is_empty());
    }
}
