// SPDX-License-Identifier: Apache-2.0

//! Remote backend adapter against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use omnilive::backends::remote::{RemoteClient, RemoteGate, RemoteTts};
use omnilive::backends::{BackendDescriptor, BackendError, GateBackend, Implementation, Role, TtsBackend};
use omnilive::reasoning::{GateReason, Verdict};
use serde_json::{json, Value};

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<Value>>>,
}

/// Serves one scripted `(status, body)` reply per connection, in order.
fn stub(replies: Vec<(u16, String)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/infer", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = requests.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.lock().unwrap().push(serde_json::from_slice(&buf).unwrap());
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    Stub { url, requests }
}

fn client(role: Role, url: &str, max_retries: u32) -> Arc<RemoteClient> {
    Arc::new(
        RemoteClient::new(role, BackendDescriptor {
            implementation: Implementation::Remote,
            endpoint: url.into(),
            timeout_ms: 2000,
            max_retries,
            max_in_flight: 1,
        })
        .unwrap(),
    )
}

fn ok(response: Value) -> (u16, String) {
    (200, json!({"version": "ol/1", "response": response}).to_string())
}

#[test]
fn retries_server_errors_then_succeeds() {
    let s = stub(vec![
        (500, "{}".into()),
        ok(json!({"verdict": "answer", "reason": "question"})),
    ]);
    let gate = RemoteGate(client(Role::Gate, &s.url, 2));
    let d = gate.predict("where are my keys").unwrap();
    assert_eq!((d.verdict, d.reason), (Verdict::Answer, GateReason::Question));
    let reqs = s.requests.lock().unwrap();
    assert_eq!(reqs.len(), 2);
    assert_eq!(reqs[0], json!({"role": "gate", "version": "ol/1", "request": {"transcript": "where are my keys"}}));
    assert_eq!(reqs[0], reqs[1]);
}

#[test]
fn gives_up_after_max_retries() {
    let s = stub(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
    let gate = RemoteGate(client(Role::Gate, &s.url, 1));
    assert!(matches!(gate.predict("hi there"), Err(BackendError::Unavailable(_))));
    assert_eq!(s.requests.lock().unwrap().len(), 2);
}

#[test]
fn application_errors_are_not_retried() {
    let s = stub(vec![
        (200, json!({"version": "ol/1", "error": {"message": "model busy"}}).to_string()),
        ok(json!({"verdict": "answer", "reason": "question"})),
    ]);
    let gate = RemoteGate(client(Role::Gate, &s.url, 3));
    assert_eq!(gate.predict("x y").unwrap_err(), BackendError::Application("model busy".into()));
    assert_eq!(s.requests.lock().unwrap().len(), 1);

    let s = stub(vec![(400, "bad".into()), ok(json!({}))]);
    let gate = RemoteGate(client(Role::Gate, &s.url, 3));
    assert!(matches!(gate.predict("x y"), Err(BackendError::Application(_))));
    assert_eq!(s.requests.lock().unwrap().len(), 1);
}

#[test]
fn malformed_responses_are_protocol_errors() {
    let s = stub(vec![ok(json!({"verdict": "perhaps"}))]);
    let gate = RemoteGate(client(Role::Gate, &s.url, 3));
    assert!(matches!(gate.predict("x y"), Err(BackendError::Protocol(_))));

    let s = stub(vec![ok(json!({"pcm_b64": "AAA="})), ok(json!({"pcm_b64": "AAAA"}))]);
    let tts = RemoteTts(client(Role::Tts, &s.url, 0));
    assert_eq!(tts.synthesize("hello").unwrap(), vec![0i16]);
    assert!(matches!(tts.synthesize("hello"), Err(BackendError::Protocol(_))));
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let gate = RemoteGate(client(Role::Gate, &format!("http://127.0.0.1:{port}/"), 1));
    assert!(matches!(gate.predict("x y"), Err(BackendError::Unavailable(_))));
}
