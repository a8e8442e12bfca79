// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::{compress_clip, integrate, MemoryError};
use crate::backends::CompressorBackend;
use crate::config::{FeatureProfile, MemoryConfig};
use crate::ingest::FrameRef;
use crate::perception::ClipFeatures;
use crate::Matrix;

/// Everything memory keeps about one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub clip_index: u64,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    /// Evenly spaced source frames, used for `<|Img|>` injection.
    pub frame_refs: Vec<FrameRef>,
    /// `H_k`.
    pub short_term: Matrix,
    /// `Ĥ_k`.
    pub global: Vec<f64>,
    /// `F_k`, only kept when `memory.retain_clip_features` is set.
    pub features: Option<Matrix>,
    pub degraded: bool,
}

/// `count` evenly spaced entries of `frames`, always including the first and
/// the last.
pub fn select_frame_refs(frames: &[FrameRef], count: usize) -> Vec<FrameRef> {
    let m = frames.len();
    if count == 0 || m == 0 {
        return Vec::new();
    }
    if m <= count {
        return frames.to_vec();
    }
    if count == 1 {
        return vec![frames[0]];
    }
    (0..count)
        .map(|i| frames[(i * (m - 1) + (count - 1) / 2) / (count - 1)])
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IngestOutcome {
    pub clip_index: u64,
    pub degraded: bool,
}

/// Immutable view of the bank at `t_ms`: the clips that had finished by then
/// and the long-term memory integrated over exactly those clips.
#[derive(Clone, Debug)]
pub struct MemorySnapshot {
    t_ms: u64,
    clips: Arc<Vec<Arc<ClipRecord>>>,
    long_term: Arc<Matrix>,
}

impl MemorySnapshot {
    /// Cold-start snapshot with no clips.
    pub fn empty(t_ms: u64, channels: usize) -> Self {
        Self {
            t_ms,
            clips: Arc::new(Vec::new()),
            long_term: Arc::new(Matrix::zeros(0, channels)),
        }
    }

    pub fn t_ms(&self) -> u64 {
        self.t_ms
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[Arc<ClipRecord>] {
        &self.clips
    }

    pub fn long_term(&self) -> &Matrix {
        &self.long_term
    }

    /// SHA-256 over every value visible through the snapshot, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.t_ms.to_le_bytes());
        h.update((self.clips.len() as u64).to_le_bytes());
        let put_matrix = |h: &mut Sha256, m: &Matrix| {
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for x in m.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        };
        for c in self.clips.iter() {
            h.update(c.clip_index.to_le_bytes());
            h.update(c.t_start_ms.to_le_bytes());
            h.update(c.t_end_ms.to_le_bytes());
            h.update([u8::from(c.degraded)]);
            for f in &c.frame_refs {
                h.update(f.seq.to_le_bytes());
                h.update(f.t_ms.to_le_bytes());
            }
            put_matrix(&mut h, &c.short_term);
            for x in &c.global {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        put_matrix(&mut h, &self.long_term);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Bounded, shareable list of snapshots; the oldest is evicted first.
#[derive(Clone, Debug)]
pub struct SnapshotStore {
    inner: Arc<Mutex<VecDeque<MemorySnapshot>>>,
    max: usize,
    channels: usize,
}

impl SnapshotStore {
    pub fn new(max: usize, channels: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(VecDeque::with_capacity(max))),
            max: max.max(1),
            channels,
        }
    }

    pub fn push(&self, snap: MemorySnapshot) {
        let mut q = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        q.push_back(snap);
        while q.len() > self.max {
            q.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latest(&self) -> Option<MemorySnapshot> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).back().cloned()
    }

    /// The most recent snapshot taken at or before `t_ms`, or an empty
    /// cold-start snapshot.
    pub fn restore_for_grounding(&self, t_ms: u64) -> MemorySnapshot {
        let q = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        q.iter()
            .rev()
            .find(|s| s.t_ms <= t_ms)
            .cloned()
            .unwrap_or_else(|| MemorySnapshot::empty(t_ms, self.channels))
    }
}

/// The live, single-writer memory bank.
pub struct MemoryBank {
    profile: FeatureProfile,
    cfg: MemoryConfig,
    backend: Arc<dyn CompressorBackend>,
    clips: Arc<Vec<Arc<ClipRecord>>>,
    long_term: Arc<Matrix>,
    snapshots: SnapshotStore,
}

impl std::fmt::Debug for MemoryBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryBank")
            .field("clips", &self.clips.len())
            .field("snapshots", &self.snapshots.len())
            .finish()
    }
}

impl MemoryBank {
    pub fn new(profile: FeatureProfile, cfg: MemoryConfig, backend: Arc<dyn CompressorBackend>) -> Self {
        let snapshots = SnapshotStore::new(cfg.max_snapshots, profile.channels);
        Self {
            long_term: Arc::new(Matrix::zeros(0, profile.channels)),
            clips: Arc::new(Vec::new()),
            profile,
            cfg,
            backend,
            snapshots,
        }
    }

    pub fn profile(&self) -> &FeatureProfile {
        &self.profile
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[Arc<ClipRecord>] {
        &self.clips
    }

    pub fn long_term(&self) -> &Matrix {
        &self.long_term
    }

    pub fn snapshot_store(&self) -> SnapshotStore {
        self.snapshots.clone()
    }

    /// Compresses `clip`, appends its record and refreshes long-term memory.
    pub fn ingest(&mut self, clip: &ClipFeatures) -> Result<IngestOutcome, MemoryError> {
        let expected = self.clips.len() as u64;
        if clip.clip_index != expected {
            return Err(MemoryError::InvalidArgument(format!(
                "clip index {} out of order, expected {expected}",
                clip.clip_index
            )));
        }
        let n = self.profile.tokens_per_frame;
        let c = self.profile.channels;
        let f = &clip.features;
        if f.cols() != c || f.rows() == 0 || f.rows() % n != 0 || f.rows() / n != clip.frames.len() {
            return Err(MemoryError::Shape(format!(
                "clip {} features are {}x{} for {} frames; profile needs N = {n}, C = {c}",
                clip.clip_index,
                f.rows(),
                f.cols(),
                clip.frames.len()
            )));
        }
        let compressed = compress_clip(f, n, self.profile.memory_tokens_per_frame, self.backend.as_ref())?;
        let record = ClipRecord {
            clip_index: clip.clip_index,
            t_start_ms: clip.t_start_ms,
            t_end_ms: clip.t_end_ms,
            frame_refs: select_frame_refs(&clip.frames, self.cfg.frame_refs_per_clip),
            short_term: compressed.short_term,
            global: compressed.global,
            features: self.cfg.retain_clip_features.then(|| f.clone()),
            degraded: compressed.degraded,
        };
        Arc::make_mut(&mut self.clips).push(Arc::new(record));
        let k = self.clips.len();
        let rows = self.integrate_window(&self.clips, k)?;
        let lt = Arc::make_mut(&mut self.long_term);
        lt.truncate_rows(k - rows.rows());
        for r in rows.iter_rows() {
            lt.push_row(r).map_err(|e| MemoryError::Shape(e.to_string()))?;
        }
        Ok(IngestOutcome {
            clip_index: clip.clip_index,
            degraded: compressed.degraded,
        })
    }

    /// Long-term rows for the last `min(W, m)` of the first `m` clips,
    /// integrated with the global memories of those `m` clips.
    fn integrate_window(&self, clips: &[Arc<ClipRecord>], m: usize) -> Result<Matrix, MemoryError> {
        let w = self.cfg.window.max(1).min(m);
        let short: Vec<&Matrix> = clips[m - w..m].iter().map(|c| &c.short_term).collect();
        let globals: Vec<&[f64]> = clips[..m].iter().map(|c| c.global.as_slice()).collect();
        integrate(&short, &globals, self.backend.as_ref())
    }

    /// Builds a snapshot of the clips finished by `t_ms` without storing it.
    pub fn snapshot(&self, t_ms: u64) -> Result<MemorySnapshot, MemoryError> {
        let m = self.clips.partition_point(|c| c.t_end_ms <= t_ms);
        if m == self.clips.len() {
            return Ok(MemorySnapshot {
                t_ms,
                clips: Arc::clone(&self.clips),
                long_term: Arc::clone(&self.long_term),
            });
        }
        if m == 0 {
            return Ok(MemorySnapshot::empty(t_ms, self.profile.channels));
        }
        let clips: Vec<Arc<ClipRecord>> = self.clips[..m].to_vec();
        let tail = self.integrate_window(&clips, m)?;
        let mut lt = self.long_term.slice_rows(0, m - tail.rows());
        for r in tail.iter_rows() {
            lt.push_row(r).map_err(|e| MemoryError::Shape(e.to_string()))?;
        }
        Ok(MemorySnapshot {
            t_ms,
            clips: Arc::new(clips),
            long_term: Arc::new(lt),
        })
    }

    /// Handles a Backup control message: snapshots and stores.
    pub fn backup(&self, t_ms: u64) -> Result<MemorySnapshot, MemoryError> {
        let snap = self.snapshot(t_ms)?;
        self.snapshots.push(snap.clone());
        Ok(snap)
    }

    /// Rebuilds a bank from previously exported records.
    pub(crate) fn from_records(
        profile: FeatureProfile,
        cfg: MemoryConfig,
        backend: Arc<dyn CompressorBackend>,
        records: Vec<ClipRecord>,
        long_term: Matrix,
    ) -> Result<Self, MemoryError> {
        if long_term.rows() != records.len() {
            return Err(MemoryError::Format(format!(
                "long-term memory has {} rows for {} clips",
                long_term.rows(),
                records.len()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.clip_index != i as u64 {
                return Err(MemoryError::Format(format!("clip indices not contiguous at {i}")));
            }
        }
        let mut bank = Self::new(profile, cfg, backend);
        bank.clips = Arc::new(records.into_iter().map(Arc::new).collect());
        bank.long_term = Arc::new(long_term);
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{hashed_vector, ReferenceCompressor};

    pub(crate) fn profile() -> FeatureProfile {
        FeatureProfile {
            frames_per_clip: 2,
            tokens_per_frame: 4,
            memory_tokens_per_frame: 2,
            channels: 8,
            ..FeatureProfile::default()
        }
    }

    pub(crate) fn clip(index: u64, t_end: u64, key: &str, p: &FeatureProfile) -> ClipFeatures {
        let row = hashed_vector(key.as_bytes(), p.channels).unwrap();
        let rows = vec![row; p.frames_per_clip * p.tokens_per_frame];
        ClipFeatures {
            clip_index: index,
            t_start_ms: t_end - 1000,
            t_end_ms: t_end,
            frames: (0..p.frames_per_clip as u64)
                .map(|i| FrameRef {
                    seq: index * 2 + i,
                    t_ms: t_end - 1000 + i * 1000,
                })
                .collect(),
            features: Matrix::from_rows(&rows).unwrap(),
        }
    }

    fn bank(cfg: MemoryConfig) -> MemoryBank {
        MemoryBank::new(profile(), cfg, Arc::new(ReferenceCompressor))
    }

    #[test]
    fn frame_refs_are_evenly_spaced() {
        let frames: Vec<FrameRef> = (0..16).map(|i| FrameRef { seq: i, t_ms: i * 1000 }).collect();
        let seqs: Vec<u64> = select_frame_refs(&frames, 4).iter().map(|f| f.seq).collect();
        assert_eq!(seqs, vec![0, 5, 10, 15]);
        assert_eq!(select_frame_refs(&frames[..3], 4).len(), 3);
        assert!(select_frame_refs(&frames, 0).is_empty());
    }

    #[test]
    fn shapes_after_every_ingest() {
        let mut b = bank(MemoryConfig::default());
        let p = profile();
        for i in 0..5 {
            b.ingest(&clip(i, 2000 * (i + 1), &format!("c{i}"), &p)).unwrap();
            assert_eq!(b.long_term().rows(), i as usize + 1);
            for c in b.clips() {
                assert_eq!(c.short_term.rows(), p.frames_per_clip * p.memory_tokens_per_frame);
            }
        }
        assert!(b.ingest(&clip(9, 99_000, "x", &p)).is_err());
    }

    #[test]
    fn windowed_long_term_equals_full_recompute_for_reference() {
        let p = profile();
        let mut small = bank(MemoryConfig {
            window: 2,
            ..MemoryConfig::default()
        });
        let mut full = bank(MemoryConfig {
            window: 100,
            ..MemoryConfig::default()
        });
        for i in 0..6 {
            let c = clip(i, 1000 * (i + 1), &format!("k{i}"), &p);
            small.ingest(&c).unwrap();
            full.ingest(&c).unwrap();
        }
        assert_eq!(small.long_term(), full.long_term());
    }

    #[test]
    fn snapshot_excludes_later_clips_and_is_immutable() {
        let p = profile();
        let mut b = bank(MemoryConfig::default());
        for i in 0..3 {
            b.ingest(&clip(i, 2000 * (i + 1), &format!("c{i}"), &p)).unwrap();
        }
        let snap = b.backup(5000).unwrap();
        assert_eq!(snap.len(), 2);
        assert_eq!(snap.long_term().rows(), 2);
        let before = snap.content_hash();
        for i in 3..50 {
            b.ingest(&clip(i, 2000 * (i + 1), &format!("c{i}"), &p)).unwrap();
        }
        assert_eq!(snap.content_hash(), before);
        assert_eq!(b.snapshot_store().restore_for_grounding(5000).content_hash(), before);
    }

    #[test]
    fn restore_picks_latest_not_after() {
        let p = profile();
        let mut b = bank(MemoryConfig {
            max_snapshots: 2,
            ..MemoryConfig::default()
        });
        b.ingest(&clip(0, 1000, "a", &p)).unwrap();
        b.backup(1000).unwrap();
        b.ingest(&clip(1, 2000, "b", &p)).unwrap();
        b.backup(2000).unwrap();
        let store = b.snapshot_store();
        assert_eq!(store.restore_for_grounding(2500).t_ms(), 2000);
        assert_eq!(store.restore_for_grounding(1500).t_ms(), 1000);
        assert!(store.restore_for_grounding(500).is_empty());
        b.backup(3000).unwrap();
        assert_eq!(store.len(), 2);
        assert!(store.restore_for_grounding(1500).is_empty());
    }
}
