// SPDX-License-Identifier: Apache-2.0

//! Bank export/import: a directory holding `manifest.json` and one
//! little-endian `f32` file per matrix. Values are narrowed to `f32` on
//! export.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ClipRecord, MemoryBank, MemoryError};
use crate::backends::CompressorBackend;
use crate::config::{FeatureProfile, MemoryConfig};
use crate::ingest::FrameRef;
use crate::Matrix;

pub const FORMAT_TAG: &str = "omnimem/1";
const MANIFEST: &str = "manifest.json";
const LONG_TERM_FILE: &str = "long_term.f32";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    k: usize,
    #[serde(rename = "T")]
    frames_per_clip: usize,
    #[serde(rename = "N")]
    tokens_per_frame: usize,
    #[serde(rename = "P")]
    memory_tokens_per_frame: usize,
    #[serde(rename = "C")]
    channels: usize,
    long_term: String,
    clips: Vec<ClipEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipEntry {
    clip_index: u64,
    t_start_ms: u64,
    t_end_ms: u64,
    frame_refs: Vec<FrameRef>,
    degraded: bool,
    short_term_rows: usize,
    short_term: String,
    global: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MemoryError + '_ {
    move |source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_f32(path: &Path, values: &[f64]) -> Result<(), MemoryError> {
    let bytes: Vec<u8> = values.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>, MemoryError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 4 {
        return Err(MemoryError::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect())
}

/// Writes the bank's clip records and long-term memory under `dir`.
pub fn export_bank(bank: &MemoryBank, dir: &Path) -> Result<(), MemoryError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = bank.profile();
    let mut clips = Vec::with_capacity(bank.len());
    for c in bank.clips() {
        let h = format!("clip_{:06}_h.f32", c.clip_index);
        let g = format!("clip_{:06}_g.f32", c.clip_index);
        write_f32(&dir.join(&h), c.short_term.data())?;
        write_f32(&dir.join(&g), &c.global)?;
        clips.push(ClipEntry {
            clip_index: c.clip_index,
            t_start_ms: c.t_start_ms,
            t_end_ms: c.t_end_ms,
            frame_refs: c.frame_refs.clone(),
            degraded: c.degraded,
            short_term_rows: c.short_term.rows(),
            short_term: h,
            global: g,
        });
    }
    write_f32(&dir.join(LONG_TERM_FILE), bank.long_term().data())?;
    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        k: bank.len(),
        frames_per_clip: p.frames_per_clip,
        tokens_per_frame: p.tokens_per_frame,
        memory_tokens_per_frame: p.memory_tokens_per_frame,
        channels: p.channels,
        long_term: LONG_TERM_FILE.into(),
        clips,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| MemoryError::Format(e.to_string()))?;
    fs::write(&path, text).map_err(io_err(&path))
}

fn member(dir: &Path, name: &str) -> Result<PathBuf, MemoryError> {
    if name.is_empty() || name.contains(['/', '\\']) || name == ".." {
        return Err(MemoryError::Format(format!("invalid file name {name:?} in manifest")));
    }
    Ok(dir.join(name))
}

/// Reads a bank written by [`export_bank`]. The archive's profile must match
/// `profile`.
pub fn import_bank(
    dir: &Path,
    profile: FeatureProfile,
    cfg: MemoryConfig,
    backend: Arc<dyn CompressorBackend>,
) -> Result<MemoryBank, MemoryError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| MemoryError::Format(e.to_string()))?;
    if m.format != FORMAT_TAG {
        return Err(MemoryError::Format(format!("unsupported format {:?}", m.format)));
    }
    let geometry = (m.frames_per_clip, m.tokens_per_frame, m.memory_tokens_per_frame, m.channels);
    let want = (
        profile.frames_per_clip,
        profile.tokens_per_frame,
        profile.memory_tokens_per_frame,
        profile.channels,
    );
    if geometry != want {
        return Err(MemoryError::Format(format!(
            "archive geometry (T, N, P, C) = {geometry:?} does not match profile {want:?}"
        )));
    }
    if m.k != m.clips.len() {
        return Err(MemoryError::Format(format!("k = {} but {} clip entries", m.k, m.clips.len())));
    }
    let c = m.channels;
    let mut records = Vec::with_capacity(m.k);
    for e in m.clips {
        let h = read_f32(&member(dir, &e.short_term)?, e.short_term_rows * c)?;
        let g = read_f32(&member(dir, &e.global)?, c)?;
        records.push(ClipRecord {
            clip_index: e.clip_index,
            t_start_ms: e.t_start_ms,
            t_end_ms: e.t_end_ms,
            frame_refs: e.frame_refs,
            short_term: Matrix::new(e.short_term_rows, c, h).map_err(|e| MemoryError::Format(e.to_string()))?,
            global: g,
            features: None,
            degraded: e.degraded,
        });
    }
    let lt = read_f32(&member(dir, &m.long_term)?, m.k * c)?;
    let long_term = Matrix::new(m.k, c, lt).map_err(|e| MemoryError::Format(e.to_string()))?;
    MemoryBank::from_records(profile, cfg, backend, records, long_term)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{hashed_vector, ReferenceCompressor};
    use crate::perception::ClipFeatures;

    #[test]
    fn round_trip_within_f32_precision() {
        let profile = FeatureProfile {
            frames_per_clip: 1,
            tokens_per_frame: 2,
            memory_tokens_per_frame: 1,
            channels: 4,
            ..FeatureProfile::default()
        };
        let backend: Arc<dyn CompressorBackend> = Arc::new(ReferenceCompressor);
        let mut bank = MemoryBank::new(profile.clone(), MemoryConfig::default(), backend.clone());
        for i in 0..3u64 {
            let a = hashed_vector(format!("a{i}").as_bytes(), 4).unwrap();
            let b = hashed_vector(format!("b{i}").as_bytes(), 4).unwrap();
            bank.ingest(&ClipFeatures {
                clip_index: i,
                t_start_ms: i * 1000,
                t_end_ms: i * 1000,
                frames: vec![FrameRef { seq: i, t_ms: i * 1000 }],
                features: Matrix::from_rows(&[a, b]).unwrap(),
            })
            .unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        export_bank(&bank, dir.path()).unwrap();
        let back = import_bank(dir.path(), profile.clone(), MemoryConfig::default(), backend.clone()).unwrap();
        assert_eq!(back.len(), 3);
        for (x, y) in back.long_term().data().iter().zip(bank.long_term().data()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(back.clips()[2].frame_refs, bank.clips()[2].frame_refs);

        let other = FeatureProfile { channels: 8, ..profile };
        assert!(import_bank(dir.path(), other, MemoryConfig::default(), backend).is_err());
    }
}
