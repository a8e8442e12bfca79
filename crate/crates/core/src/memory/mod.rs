// SPDX-License-Identifier: Apache-2.0

//! Long memory: per-clip short-term and global memories, the long-term
//! memory integrated over them, snapshots for grounding, and retrieval.

mod bank;
mod persist;
mod retrieve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bank::{ClipRecord, IngestOutcome, MemoryBank, MemorySnapshot, SnapshotStore};
pub use persist::{export_bank, import_bank, FORMAT_TAG};
pub use retrieve::{retrieve, Retrieval, RetrievedClip};

use crate::backends::{tokenize, BackendError, CompressionInput, CompressorBackend, IntegrationInput};
use crate::matrix::normalize;
use crate::Matrix;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed memory archive: {0}")]
    Format(String),
}

/// Spatial down-sampling of `F_k` to the initial short-term memory `H_k⁰`:
/// each of the `P` output tokens of a frame is the mean of `N/P` contiguous
/// input tokens.
pub fn init_short_term(features: &Matrix, tokens_per_frame: usize, memory_tokens: usize) -> Result<Matrix, MemoryError> {
    let (n, p) = (tokens_per_frame, memory_tokens);
    if p == 0 || n == 0 || n % p != 0 {
        return Err(MemoryError::InvalidArgument(format!(
            "memory_tokens_per_frame ({p}) must divide tokens_per_frame ({n})"
        )));
    }
    if features.rows() % n != 0 {
        return Err(MemoryError::Shape(format!(
            "clip has {} rows, not a multiple of N = {n}",
            features.rows()
        )));
    }
    let group = n / p;
    let cols = features.cols();
    let out_rows = features.rows() / group;
    let mut data = Vec::with_capacity(out_rows * cols);
    for g in 0..out_rows {
        let mut acc = vec![0.0; cols];
        for r in g * group..(g + 1) * group {
            acc.iter_mut().zip(features.row(r)).for_each(|(a, x)| *a += x);
        }
        data.extend(acc.into_iter().map(|a| a / group as f64));
    }
    Ok(Matrix::new(out_rows, cols, data).expect("computed shape"))
}

/// Result of compressing one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Compressed {
    pub short_term: Matrix,
    pub global: Vec<f64>,
    /// The backend failed and the fallback rule was used.
    pub degraded: bool,
}

/// `H_k, Ĥ_k = Compressor([F_k ∘ H_k⁰ ∘ Ĥ_k⁰])` with `Ĥ_k⁰ = 0`.
///
/// On backend failure the clip keeps `H_k = H_k⁰` and
/// `Ĥ_k = normalize(mean(rows of F_k))` and is flagged as degraded.
pub fn compress_clip(
    features: &Matrix,
    tokens_per_frame: usize,
    memory_tokens: usize,
    backend: &dyn CompressorBackend,
) -> Result<Compressed, MemoryError> {
    if features.rows() == 0 {
        return Err(MemoryError::Shape("clip has no frames".into()));
    }
    let h0 = backend
        .down_sample(features, tokens_per_frame, memory_tokens)
        .or_else(|e| {
            tracing::warn!("down-sampling backend failed, using group mean: {e}");
            init_short_term(features, tokens_per_frame, memory_tokens)
        })?;
    let expected_rows = features.rows() / tokens_per_frame * memory_tokens;
    if h0.rows() != expected_rows || h0.cols() != features.cols() {
        return Err(MemoryError::Shape(format!(
            "down-sampled memory is {}x{}, expected {expected_rows}x{}",
            h0.rows(),
            h0.cols(),
            features.cols()
        )));
    }
    let g0 = vec![0.0; features.cols()];
    let input = CompressionInput {
        features,
        short_term: &h0,
        global: &g0,
    };
    match backend.compress(input) {
        Ok((h, g))
            if h.rows() == h0.rows() && h.cols() == h0.cols() && g.len() == g0.len() && h.is_finite()
                && g.iter().all(|x| x.is_finite()) =>
        {
            Ok(Compressed {
                short_term: h,
                global: g,
                degraded: false,
            })
        }
        outcome => {
            match outcome {
                Err(e) => tracing::warn!("compressor failed, storing degraded clip: {e}"),
                Ok(_) => tracing::warn!("compressor returned malformed memories, storing degraded clip"),
            }
            Ok(Compressed {
                global: normalize(&features.mean_row()),
                short_term: h0,
                degraded: true,
            })
        }
    }
}

/// Reference integration rule, also the fallback when a backend fails:
/// `H̄_j = normalize(mean(rows of H_j))`.
pub fn reference_long_term_row(short_term: &Matrix) -> Vec<f64> {
    normalize(&short_term.mean_row())
}

/// Long-term memory rows for `short_term` (one per clip, in order), given
/// every clip's global memory.
pub fn integrate(
    short_term: &[&Matrix],
    globals: &[&[f64]],
    backend: &dyn CompressorBackend,
) -> Result<Matrix, MemoryError> {
    if short_term.is_empty() {
        return Err(MemoryError::InvalidArgument("integration needs at least one clip".into()));
    }
    let c = short_term[0].cols();
    if short_term.iter().any(|h| h.cols() != c) || globals.iter().any(|g| g.len() != c) {
        return Err(MemoryError::Shape("inconsistent channel count across clips".into()));
    }
    let input = IntegrationInput {
        short_term: short_term.to_vec(),
        globals: globals.to_vec(),
    };
    match backend.integrate(&input) {
        Ok(m) if m.rows() == short_term.len() && m.cols() == c && m.is_finite() => Ok(m),
        other => {
            if let Err(e) = other {
                tracing::warn!("integration backend failed, using reference rule: {e}");
            } else {
                tracing::warn!("integration backend returned a malformed matrix, using reference rule");
            }
            let rows: Vec<Vec<f64>> = short_term.iter().map(|h| reference_long_term_row(h)).collect();
            Ok(Matrix::from_rows(&rows).expect("uniform rows"))
        }
    }
}

/// Memory-space-aligned question feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionFeature {
    pub q: Vec<f64>,
    pub text: String,
}

pub fn encode_question(
    long_term: &Matrix,
    question: &str,
    channels: usize,
    backend: &dyn CompressorBackend,
) -> Result<QuestionFeature, MemoryError> {
    let tokens = tokenize(question);
    if tokens.is_empty() {
        return Err(MemoryError::InvalidArgument("question is empty".into()));
    }
    let q = backend.encode_question(long_term, &tokens, channels)?;
    if q.len() != channels || q.iter().any(|x| !x.is_finite()) {
        return Err(MemoryError::Shape(format!(
            "question feature must have {channels} finite entries"
        )));
    }
    Ok(QuestionFeature {
        q,
        text: question.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{hashed_vector, ReferenceCompressor};
    use crate::matrix::l2_norm;
    use proptest::prelude::*;

    fn e(i: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; c];
        v[i] = 1.0;
        v
    }

    struct Failing;
    impl CompressorBackend for Failing {
        fn compress(&self, _: CompressionInput<'_>) -> Result<(Matrix, Vec<f64>), BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn integrate(&self, _: &IntegrationInput<'_>) -> Result<Matrix, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
        fn encode_question(&self, _: &Matrix, _: &[String], _: usize) -> Result<Vec<f64>, BackendError> {
            Err(BackendError::Unavailable("down".into()))
        }
    }

    fn naive_group_mean(f: &Matrix, n: usize, p: usize) -> Matrix {
        let frames = f.rows() / n;
        let g = n / p;
        let mut rows = Vec::new();
        for t in 0..frames {
            for j in 0..p {
                let mut acc = vec![0.0; f.cols()];
                for i in 0..g {
                    let r = f.row(t * n + j * g + i);
                    for c in 0..f.cols() {
                        acc[c] += r[c] / g as f64;
                    }
                }
                rows.push(acc);
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn down_sampling_examples() {
        let f = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(init_short_term(&f, 2, 1).unwrap().row(0), &[0.5, 0.5]);
        assert_eq!(init_short_term(&f, 2, 2).unwrap(), f);
        assert!(init_short_term(&f, 2, 3).is_err());
        assert!(init_short_term(&f, 16, 3).is_err());
    }

    #[test]
    fn compress_identical_rows() {
        let f = Matrix::from_rows(&vec![e(1, 4); 8]).unwrap();
        let c = compress_clip(&f, 4, 2, &ReferenceCompressor).unwrap();
        assert_eq!(c.global, e(1, 4));
        assert!(c.short_term.iter_rows().all(|r| r == e(1, 4).as_slice()));
        assert_eq!(c.short_term.rows(), 4);
        assert!(!c.degraded);
    }

    #[test]
    fn compress_half_and_half() {
        let mut rows = vec![e(0, 3); 4];
        rows.extend(vec![e(1, 3); 4]);
        let f = Matrix::from_rows(&rows).unwrap();
        let c = compress_clip(&f, 4, 1, &ReferenceCompressor).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((c.global[0] - s).abs() < 1e-15 && (c.global[1] - s).abs() < 1e-15 && c.global[2] == 0.0);
    }

    #[test]
    fn degraded_mode_on_backend_failure() {
        let f = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let c = compress_clip(&f, 2, 1, &Failing).unwrap();
        assert!(c.degraded);
        assert_eq!(c.global, vec![1.0, 0.0]);
        assert_eq!(c.short_term.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn integrate_single_clip_matches_global() {
        let f = Matrix::from_rows(&[vec![0.3, 0.4], vec![0.3, 0.4]]).unwrap();
        let c = compress_clip(&f, 2, 1, &ReferenceCompressor).unwrap();
        let lt = integrate(&[&c.short_term], &[&c.global], &ReferenceCompressor).unwrap();
        for (a, b) in lt.row(0).iter().zip(&c.global) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn integrate_orthogonal_and_fallback() {
        let hs: Vec<Matrix> = (0..3).map(|i| Matrix::from_rows(&[e(i, 3), e(i, 3)]).unwrap()).collect();
        let gs: Vec<Vec<f64>> = (0..3).map(|i| e(i, 3)).collect();
        let hr: Vec<&Matrix> = hs.iter().collect();
        let gr: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
        let lt = integrate(&hr, &gr, &ReferenceCompressor).unwrap();
        for i in 0..3 {
            assert_eq!(lt.row(i), e(i, 3).as_slice());
        }
        assert_eq!(integrate(&hr, &gr, &Failing).unwrap(), lt);
    }

    #[test]
    fn question_encoding() {
        let lt = Matrix::zeros(0, 8);
        let q = encode_question(&lt, "Umbrella", 8, &ReferenceCompressor).unwrap();
        assert_eq!(q.q, hashed_vector(b"umbrella", 8).unwrap());
        let q2 = encode_question(&lt, "umbrella", 8, &ReferenceCompressor).unwrap();
        assert_eq!(q.q, q2.q);
        assert!(encode_question(&lt, " ... ", 8, &ReferenceCompressor).is_err());
        let multi = encode_question(&lt, "weather today", 8, &ReferenceCompressor).unwrap();
        let a = hashed_vector(b"weather", 8).unwrap();
        let b = hashed_vector(b"today", 8).unwrap();
        let mean: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        let n = l2_norm(&mean);
        for (x, m) in multi.q.iter().zip(&mean) {
            assert!((x - m / n).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn group_mean_matches_naive(frames in 1usize..4, data in proptest::collection::vec(-10.0f64..10.0, 16 * 3 * 4)) {
            let f = Matrix::new(frames * 16, 3, data[..frames * 16 * 3].to_vec()).unwrap();
            let fast = init_short_term(&f, 16, 4).unwrap();
            let slow = naive_group_mean(&f, 16, 4);
            prop_assert_eq!(fast.rows(), frames * 4);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn global_memory_is_unit_norm(data in proptest::collection::vec(-5.0f64..5.0, 8 * 6)) {
            let f = Matrix::new(8, 6, data).unwrap();
            let c = compress_clip(&f, 4, 2, &ReferenceCompressor).unwrap();
            prop_assert!((l2_norm(&c.global) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn integration_commutes_with_permutation(seed in 0u64..1000) {
            let hs: Vec<Matrix> = (0..4)
                .map(|i| Matrix::from_rows(&[
                    hashed_vector(format!("{seed}-{i}-a").as_bytes(), 5).unwrap(),
                    hashed_vector(format!("{seed}-{i}-b").as_bytes(), 5).unwrap(),
                ]).unwrap())
                .collect();
            let gs: Vec<Vec<f64>> = hs.iter().map(|h| normalize(&h.mean_row())).collect();
            let perm = [2usize, 0, 3, 1];
            let fwd = integrate(&hs.iter().collect::<Vec<_>>(), &gs.iter().map(Vec::as_slice).collect::<Vec<_>>(), &ReferenceCompressor).unwrap();
            let ph: Vec<&Matrix> = perm.iter().map(|&i| &hs[i]).collect();
            let pg: Vec<&[f64]> = perm.iter().map(|&i| gs[i].as_slice()).collect();
            let permuted = integrate(&ph, &pg, &ReferenceCompressor).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(permuted.row(k), fwd.row(i));
            }
        }
    }
}
