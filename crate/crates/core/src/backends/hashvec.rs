// SPDX-License-Identifier: Apache-2.0

//! Deterministic hashed embeddings shared by every reference backend.
//!
//! The construction is fixed so independent implementations agree bitwise:
//!
//! 1. `seed = FNV-1a-64(key)` with offset basis `0xcbf29ce484222325` and
//!    prime `0x100000001b3`.
//! 2. A SplitMix64 stream starting at `seed`: each step adds
//!    `0x9e3779b97f4a7c15` to the state, then mixes with
//!    `z = (z ^ z>>30) * 0xbf58476d1ce4e5b9`, `z = (z ^ z>>27) * 0x94d049bb133111eb`,
//!    `z ^ z>>31` (wrapping arithmetic).
//! 3. A uniform draw is `(next >> 11) * 2^-53`, in `[0, 1)`.
//! 4. Each of the `C` components is `(u1 + u2 + u3 + u4 - 2) * sqrt(3)`,
//!    four consecutive uniform draws summed in order (Irwin-Hall, unit variance).
//! 5. The vector is divided by its L2 norm, accumulated left to right.

use thiserror::Error;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("hashed vector dimension must be at least 2, got {0}")]
pub struct DimensionError(pub usize);

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_approx_normal(&mut self) -> f64 {
        let sum = self.next_uniform() + self.next_uniform() + self.next_uniform() + self.next_uniform();
        (sum - 2.0) * 3f64.sqrt()
    }
}

/// Unit vector of `dim` components derived from `key`.
pub fn hashed_vector(key: &[u8], dim: usize) -> Result<Vec<f64>, DimensionError> {
    if dim < 2 {
        return Err(DimensionError(dim));
    }
    let mut rng = SplitMix64::new(fnv1a64(key));
    let raw: Vec<f64> = (0..dim).map(|_| rng.next_approx_normal()).collect();
    let mut sq = 0.0;
    for v in &raw {
        sq += v * v;
    }
    let norm = sq.sqrt();
    Ok(raw.into_iter().map(|v| v / norm).collect())
}

/// Lowercased word tokens: maximal runs of alphanumerics and apostrophes,
/// with apostrophes trimmed from both ends.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
