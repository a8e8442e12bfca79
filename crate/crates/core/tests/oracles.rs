// SPDX-License-Identifier: Apache-2.0

//! Comparisons against values frozen by the scripts in `oracles/`.

use image::{codecs::jpeg::JpegEncoder, ExtendedColorType};
use omnilive::backends::{hashed_vector, FrameEncoderBackend, ReferenceFrameEncoder};
use omnilive::config::FeatureProfile;
use omnilive::harness::{measure, replay_detailed, scenarios, Metrics, ReplayMode, RunReport};
use omnilive::memory::init_short_term;
use omnilive::pipeline::PipelineEvent;
use omnilive::{Config, Matrix};
use serde::Deserialize;
use serde_json::Value;

fn golden(name: &str) -> Value {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn from_bits(v: &Value) -> f64 {
    f64::from_bits(u64::from_str_radix(v.as_str().unwrap(), 16).unwrap())
}

fn hex_decode(s: &str) -> Vec<u8> {
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
}

#[test]
fn hashed_vectors_match_bitwise() {
    let g = golden("hashed_vectors.json");
    let cases = g["vectors"].as_array().unwrap();
    assert!(!cases.is_empty());
    for case in cases {
        let key = hex_decode(case["key_hex"].as_str().unwrap());
        let dim = case["dim"].as_u64().unwrap() as usize;
        let want: Vec<f64> = case["bits"].as_array().unwrap().iter().map(from_bits).collect();
        let got = hashed_vector(&key, dim).unwrap();
        assert_eq!(
            got.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            want.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            "key {key:?} dim {dim}"
        );
    }
}

#[test]
fn black_frame_is_constant_matrix() {
    let g = &golden("hashed_vectors.json")["black_frame"];
    let n = g["tokens_per_frame"].as_u64().unwrap() as usize;
    let c = g["channels"].as_u64().unwrap() as usize;
    let mut jpeg = Vec::new();
    JpegEncoder::new_with_quality(&mut jpeg, 90)
        .encode(&vec![0u8; 64 * 48 * 3], 64, 48, ExtendedColorType::Rgb8)
        .unwrap();
    let profile = FeatureProfile {
        tokens_per_frame: n,
        channels: c,
        ..FeatureProfile::default()
    };
    let m = ReferenceFrameEncoder.encode(&jpeg, &profile).unwrap();
    assert_eq!((m.rows(), m.cols()), (n, c));
    for (r, want) in g["rows"].as_array().unwrap().iter().enumerate() {
        let want: Vec<u64> = want.as_array().unwrap().iter().map(|v| from_bits(v).to_bits()).collect();
        let got: Vec<u64> = m.row(r).iter().map(|x| x.to_bits()).collect();
        assert_eq!(got, want, "row {r}");
    }
}

#[test]
fn group_means_match() {
    let cases = golden("group_means.json");
    for case in cases.as_array().unwrap() {
        let rows = |k: &str| -> Vec<Vec<f64>> { Deserialize::deserialize(&case[k]).unwrap() };
        let f = Matrix::from_rows(&rows("features")).unwrap();
        let n = case["tokens_per_frame"].as_u64().unwrap() as usize;
        let p = case["memory_tokens"].as_u64().unwrap() as usize;
        let h = init_short_term(&f, n, p).unwrap();
        let want = rows("short_term");
        assert_eq!(h.rows(), want.len());
        for (i, w) in want.iter().enumerate() {
            for (a, b) in h.row(i).iter().zip(w) {
                assert!((a - b).abs() <= 1e-12, "row {i}: {a} vs {b}");
            }
        }
        let global: Vec<f64> = Deserialize::deserialize(&case["global"]).unwrap();
        let got = omnilive::matrix::normalize(&f.mean_row());
        for (a, b) in got.iter().zip(&global) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn scenario_scores_match() {
    let g = golden("scenario_scores.json");
    let base = Config::default();
    for trace in [
        scenarios::weather(),
        scenarios::sandwich(),
        scenarios::what_is_this(),
        scenarios::snapshot_isolation(),
    ] {
        let want = &g[trace.name.as_str()];
        let question = want["question"].as_str().unwrap();
        let ranked = want["ranked"].as_array().unwrap();
        let out = replay_detailed(&trace, &base, ReplayMode::Virtual).unwrap();
        let got = out
            .events
            .iter()
            .find_map(|e| match e {
                PipelineEvent::Retrieval { question: q, ranked, .. } if q == question => Some(ranked.clone()),
                _ => None,
            })
            .unwrap_or_else(|| panic!("{}: no retrieval for {question:?}", trace.name));
        let k = out.config.memory.top_k.min(ranked.len());
        assert_eq!(got.len(), k, "{}", trace.name);
        for ((clip, score), w) in got.iter().zip(ranked) {
            assert_eq!(*clip, w["clip"].as_u64().unwrap(), "{}", trace.name);
            let ws = w["score"].as_f64().unwrap();
            assert!((score - ws).abs() <= 1e-12, "{}: {score} vs {ws}", trace.name);
        }
    }
}

#[test]
fn three_burst_segments_match_offline_detector() {
    let g = golden("vad_three_burst.json");
    let report = omnilive::harness::replay(&scenarios::three_burst(), &Config::default(), ReplayMode::Virtual).unwrap();
    let want: Vec<(u64, u64)> = g["segments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["start_ms"].as_u64().unwrap(), s["end_ms"].as_u64().unwrap()))
        .collect();
    let got: Vec<(u64, u64)> = report.voice_segments.iter().map(|s| (s.t_start_ms, s.t_end_ms)).collect();
    assert_eq!(got, want);
}

#[test]
fn metrics_match_spreadsheet() {
    let g = golden("metrics_sheet.json");
    let report: RunReport = Deserialize::deserialize(&g["report"]).unwrap();
    let want: Metrics = Deserialize::deserialize(&g["metrics"]).unwrap();
    let got = measure(&report);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    assert_eq!((got.queries, got.answered, got.ignored), (want.queries, want.answered, want.ignored));
    assert_eq!((got.expects_passed, got.expects_failed), (want.expects_passed, want.expects_failed));
    assert!(close(got.precision_at_k.unwrap(), want.precision_at_k.unwrap()));
    for (name, a, b) in [
        ("first_audio", &got.first_audio_ms, &want.first_audio_ms),
        ("gate", &got.gate_ms, &want.gate_ms),
        ("retrieve", &got.retrieve_ms, &want.retrieve_ms),
        ("generate", &got.generate_ms, &want.generate_ms),
        ("interrupt", &got.interrupt_ms, &want.interrupt_ms),
    ] {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert_eq!(a.count, b.count, "{name}");
        assert_eq!((a.p50, a.p95, a.max), (b.p50, b.p95, b.max), "{name}");
        assert!(close(a.mean, b.mean), "{name}: {} vs {}", a.mean, b.mean);
    }
}

#[test]
fn bundled_trace_files_match_builders() {
    for trace in scenarios::bundled() {
        let path = format!("{}/assets/traces/{}.jsonl", env!("CARGO_MANIFEST_DIR"), trace.name);
        let on_disk = std::fs::read_to_string(&path).unwrap();
        assert_eq!(on_disk, trace.to_jsonl(), "{path} is stale; rerun ol-replay --write-bundled");
    }
}
