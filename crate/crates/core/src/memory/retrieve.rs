// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use super::{ClipRecord, MemoryError, MemorySnapshot, QuestionFeature};
use crate::matrix::cosine;

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievedClip {
    pub clip_index: u64,
    /// Ranking score: cosine plus the recency term.
    pub score: f64,
    pub cosine: f64,
    pub record: Arc<ClipRecord>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Retrieval {
    pub clips: Vec<RetrievedClip>,
    /// The snapshot held no clips; reasoning answers without memory.
    pub no_memory: bool,
}

impl Retrieval {
    pub fn indices(&self) -> Vec<u64> {
        self.clips.iter().map(|c| c.clip_index).collect()
    }
}

/// Ranks the snapshot's clips by `cos(q, Ĥ_j) + λ / (1 + age_j)`, where
/// `age_j` counts the clips newer than `j` in the snapshot. Ties go to the
/// earlier clip.
pub fn retrieve(
    q: &QuestionFeature,
    snapshot: &MemorySnapshot,
    top_k: usize,
    recency_bonus: f64,
) -> Result<Retrieval, MemoryError> {
    if top_k == 0 {
        return Err(MemoryError::InvalidArgument("top_k must be at least 1".into()));
    }
    if snapshot.is_empty() {
        return Ok(Retrieval {
            clips: Vec::new(),
            no_memory: true,
        });
    }
    let k = snapshot.len();
    let mut scored: Vec<RetrievedClip> = snapshot
        .clips()
        .iter()
        .enumerate()
        .map(|(pos, rec)| {
            let cos = cosine(&q.q, &rec.global);
            let age = (k - 1 - pos) as f64;
            RetrievedClip {
                clip_index: rec.clip_index,
                score: cos + recency_bonus / (1.0 + age),
                cosine: cos,
                record: Arc::clone(rec),
            }
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.clip_index.cmp(&b.clip_index)));
    scored.truncate(top_k);
    Ok(Retrieval {
        clips: scored,
        no_memory: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{hashed_vector, ReferenceCompressor};
    use crate::config::{FeatureProfile, MemoryConfig};
    use crate::ingest::FrameRef;
    use crate::memory::MemoryBank;
    use crate::perception::ClipFeatures;
    use crate::Matrix;
    use proptest::prelude::*;

    fn bank_of(globals: &[Vec<f64>]) -> MemorySnapshot {
        let c = globals[0].len();
        let profile = FeatureProfile {
            frames_per_clip: 1,
            tokens_per_frame: 1,
            memory_tokens_per_frame: 1,
            channels: c,
            ..FeatureProfile::default()
        };
        let mut bank = MemoryBank::new(profile, MemoryConfig::default(), Arc::new(ReferenceCompressor));
        for (i, g) in globals.iter().enumerate() {
            bank.ingest(&ClipFeatures {
                clip_index: i as u64,
                t_start_ms: i as u64 * 1000,
                t_end_ms: i as u64 * 1000,
                frames: vec![FrameRef {
                    seq: i as u64,
                    t_ms: i as u64 * 1000,
                }],
                features: Matrix::from_rows(&[g]).unwrap(),
            })
            .unwrap();
        }
        bank.snapshot(u64::MAX).unwrap()
    }

    fn q(v: Vec<f64>) -> QuestionFeature {
        QuestionFeature { q: v, text: String::new() }
    }

    #[test]
    fn picks_matching_clip() {
        let snap = bank_of(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let r = retrieve(&q(vec![0.0, 1.0, 0.0]), &snap, 1, 0.0).unwrap();
        assert_eq!(r.indices(), vec![1]);
        assert!((r.clips[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_query_ties_break_by_index() {
        let snap = bank_of(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]);
        let r = retrieve(&q(vec![0.0, 0.0, 1.0]), &snap, 2, 0.0).unwrap();
        assert_eq!(r.indices(), vec![0, 1]);
        assert!(r.clips.iter().all(|c| c.score == 0.0));
    }

    #[test]
    fn empty_bank_flags_no_memory() {
        let snap = MemorySnapshot::empty(0, 4);
        let r = retrieve(&q(vec![1.0, 0.0, 0.0, 0.0]), &snap, 2, 0.0).unwrap();
        assert!(r.no_memory && r.clips.is_empty());
        assert!(retrieve(&q(vec![1.0; 4]), &snap, 0, 0.0).is_err());
    }

    #[test]
    fn recency_bonus_prefers_latest() {
        let snap = bank_of(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]]);
        let r = retrieve(&q(vec![1.0, 0.0]), &snap, 1, 0.0).unwrap();
        assert_eq!(r.indices(), vec![0]);
        let r = retrieve(&q(vec![1.0, 0.0]), &snap, 1, 2.0).unwrap();
        assert_eq!(r.indices(), vec![2]);
    }

    fn brute_force(q: &[f64], globals: &[Vec<f64>], top_k: usize) -> Vec<u64> {
        let mut all: Vec<(f64, u64)> = globals
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let dot: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
                let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                let ng = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                let s = if nq == 0.0 || ng == 0.0 { 0.0 } else { (dot / (nq * ng)).clamp(-1.0, 1.0) };
                (s, i as u64)
            })
            .collect();
        // Insertion sort on (score desc, index asc).
        for i in 1..all.len() {
            let mut j = i;
            while j > 0 && (all[j].0 > all[j - 1].0 || (all[j].0 == all[j - 1].0 && all[j].1 < all[j - 1].1)) {
                all.swap(j, j - 1);
                j -= 1;
            }
        }
        all.into_iter().take(top_k).map(|(_, i)| i).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn matches_brute_force(seed in 0u64..u64::MAX, k in 1usize..64, c in 2usize..32, top_k in 1usize..8) {
            let globals: Vec<Vec<f64>> = (0..k)
                .map(|i| hashed_vector(format!("{seed}/{i}").as_bytes(), c).unwrap())
                .collect();
            let query = hashed_vector(format!("{seed}/q").as_bytes(), c).unwrap();
            let snap = bank_of(&globals);
            let got = retrieve(&q(query.clone()), &snap, top_k, 0.0).unwrap();
            let stored: Vec<Vec<f64>> = snap.clips().iter().map(|c| c.global.clone()).collect();
            prop_assert_eq!(got.indices(), brute_force(&query, &stored, top_k));
            for r in &got.clips {
                prop_assert!((-1.0..=1.0).contains(&r.score));
            }
        }
    }
}
