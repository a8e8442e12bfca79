// SPDX-License-Identifier: Apache-2.0

//! Published schemas against what the server actually emits.

use omnilive::config::FeatureProfile;
use omnilive::gateway::{JsonMessage, Outbound, ProfileRequest, StatusLevel};
use omnilive::harness::{replay_detailed, scenarios, ReplayMode};
use omnilive::Config;
use serde_json::{json, Value};

fn schema(rel: &str) -> jsonschema::Validator {
    let path = format!("{}/assets/schema/{rel}", env!("CARGO_MANIFEST_DIR"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn assert_valid(v: &jsonschema::Validator, instance: &Value) {
    let errs: Vec<String> = v.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errs.is_empty(), "{instance}\n{}", errs.join("\n"));
}

#[test]
fn emitted_messages_and_reports_validate() {
    let wire = schema("wire.schema.json");
    let report_schema = schema("run_report.schema.json");
    let mut seen = std::collections::BTreeSet::new();
    for trace in scenarios::bundled() {
        let out = replay_detailed(&trace, &Config::default(), ReplayMode::Virtual).unwrap();
        for entry in &out.client {
            if let Outbound::Json(m) = &entry.msg {
                seen.insert(m.type_name());
                assert_valid(&wire, &serde_json::to_value(m).unwrap());
            }
        }
        assert_valid(&report_schema, &serde_json::from_str(&out.report.to_json()).unwrap());
    }
    for t in ["interrupt", "transcript", "answer"] {
        assert!(seen.contains(t), "no {t} message was exercised");
    }
}

#[test]
fn handshake_messages_validate() {
    let wire = schema("wire.schema.json");
    let msgs = [
        JsonMessage::Hello {
            v: "ol/1".into(),
            session: "s".into(),
            profile: Some(ProfileRequest {
                channels: Some(32),
                ..ProfileRequest::default()
            }),
        },
        JsonMessage::Ready {
            v: "ol/1".into(),
            session: "s".into(),
            profile: FeatureProfile::default(),
        },
        JsonMessage::status(Some("s"), StatusLevel::Warn, "bad_frame", "not a JPEG"),
        JsonMessage::Bye {
            session: None,
            reason: "version".into(),
        },
    ];
    for m in msgs {
        assert_valid(&wire, &serde_json::to_value(&m).unwrap());
    }
    assert!(!wire.is_valid(&json!({"type": "hello", "v": "ol/1"})));
    assert!(!wire.is_valid(&json!({"type": "answer", "session": "s"})));
    assert!(!wire.is_valid(&json!({"type": "bye", "reason": "x", "extra": 1})));
}

#[test]
fn remote_schemas_accept_reference_shapes() {
    let m = json!({"rows": 1, "cols": 2, "data": [0.6, 0.8]});
    let cases = [
        (
            "asr",
            json!({"segment_id": 1, "t_start_ms": 0, "t_end_ms": 500, "sample_rate": 16000, "pcm_b64": "AAA="}),
            json!({"sound_class": "speech", "transcript": "hi"}),
        ),
        (
            "frame_encoder",
            json!({"jpeg_b64": "/9j/", "tokens_per_frame": 1, "channels": 2}),
            json!({"tokens": m}),
        ),
        (
            "compressor",
            json!({"op": "compress", "features": m, "short_term": m, "global": [1.0, 0.0]}),
            json!({"short_term": m, "global": [1.0, 0.0]}),
        ),
        (
            "compressor",
            json!({"op": "encode_question", "long_term": m, "tokens": ["hi"], "channels": 2}),
            json!({"vector": [1.0, 0.0]}),
        ),
        (
            "gate",
            json!({"transcript": "what is this"}),
            json!({"verdict": "answer", "reason": "question"}),
        ),
        (
            "reasoner",
            json!({"prompt": {"text": "Question: hi", "question": "hi", "clips": []}}),
            json!({"text": "Hello."}),
        ),
        ("tts", json!({"text": "Hello.", "sample_rate": 16000}), json!({"pcm_b64": "AAA="})),
    ];
    for (role, request, response) in cases {
        let v = schema(&format!("remote/{role}.schema.json"));
        assert_valid(&v, &json!({"request": request, "response": response}));
    }
    let gate = schema("remote/gate.schema.json");
    assert!(!gate.is_valid(&json!({"request": {"transcript": "x"}, "response": {"verdict": "maybe", "reason": "question"}})));
}
