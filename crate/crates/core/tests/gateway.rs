// SPDX-License-Identifier: Apache-2.0

//! End-to-end WebSocket sessions against a live server on a loopback port.

use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use omnilive::backends::Backends;
use omnilive::gateway::{serve, BinaryFrame, BinaryKind, JsonMessage, ServerState};
use omnilive::harness::scenarios::voice_wave;
use omnilive::ingest::pcm_to_bytes;
use omnilive::Config;
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start() -> (SocketAddr, tokio::sync::oneshot::Sender<()>) {
    let cfg = Config::default();
    let state = ServerState::new(cfg.clone(), Backends::reference(&cfg));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve(listener, state, async move {
        let _ = rx.await;
    }));
    (addr, tx)
}

async fn connect(addr: SocketAddr) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{addr}/ws/ol")).await.unwrap().0
}

async fn send_json(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

/// Next JSON message, skipping binary audio.
async fn next_json(ws: &mut Ws) -> Option<JsonMessage> {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.expect("timed out")?;
        match m.ok()? {
            Message::Text(t) => return Some(JsonMessage::from_json(&t).unwrap()),
            Message::Close(_) => return None,
            _ => {}
        }
    }
}

async fn wait_for(ws: &mut Ws, pred: impl Fn(&JsonMessage) -> bool) -> JsonMessage {
    loop {
        let m = next_json(ws).await.expect("connection closed before the expected message");
        if pred(&m) {
            return m;
        }
    }
}

async fn hello(ws: &mut Ws, session: &str) -> JsonMessage {
    send_json(ws, json!({"type": "hello", "v": "ol/1", "session": session})).await;
    next_json(ws).await.expect("reply to hello")
}

fn bye_reason(m: &JsonMessage) -> &str {
    match m {
        JsonMessage::Bye { reason, .. } => reason,
        other => panic!("expected bye, got {other:?}"),
    }
}

fn frame(kind: BinaryKind, seq: u32, t_ms: u64, body: Vec<u8>) -> Message {
    Message::Binary(BinaryFrame { kind, seq, t_ms, body }.encode().into())
}

async fn healthz(addr: SocketAddr) -> Value {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(b"GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let (head, body) = buf.split_once("\r\n\r\n").unwrap();
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    serde_json::from_str(body).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn handshake_rejections() {
    let (addr, _stop) = start().await;

    let mut ws = connect(addr).await;
    send_json(&mut ws, json!({"type": "hello", "v": "ol/0", "session": "old"})).await;
    assert_eq!(bye_reason(&next_json(&mut ws).await.unwrap()), "version");
    assert!(next_json(&mut ws).await.is_none());

    let mut ws = connect(addr).await;
    ws.send(frame(BinaryKind::AudioIn, 0, 0, vec![0; 512])).await.unwrap();
    assert_eq!(bye_reason(&next_json(&mut ws).await.unwrap()), "protocol");

    let mut ws = connect(addr).await;
    send_json(&mut ws, json!({"type": "hello", "v": "ol/1", "session": "p", "profile": {"channels": 1}})).await;
    assert_eq!(bye_reason(&next_json(&mut ws).await.unwrap()), "profile");

    let mut first = connect(addr).await;
    assert!(matches!(hello(&mut first, "dup").await, JsonMessage::Ready { .. }));
    let mut second = connect(addr).await;
    assert_eq!(bye_reason(&hello(&mut second, "dup").await), "duplicate");
    // The first connection is unaffected.
    send_json(&mut first, json!({"type": "bye", "reason": "done"})).await;
    assert_eq!(bye_reason(&wait_for(&mut first, |m| matches!(m, JsonMessage::Bye { .. })).await), "closed");

    // The slot is free again once the first connection has closed.
    tokio::time::sleep(Duration::from_millis(100)).await;
    let mut third = connect(addr).await;
    assert!(matches!(hello(&mut third, "dup").await, JsonMessage::Ready { .. }));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn live_session_round_trip() {
    let (addr, _stop) = start().await;
    let mut ws = connect(addr).await;
    match hello(&mut ws, "live").await {
        JsonMessage::Ready { v, session, profile } => {
            assert_eq!((v.as_str(), session.as_str()), ("ol/1", "live"));
            assert_eq!(profile, Config::default().profile);
        }
        other => panic!("expected ready, got {other:?}"),
    }

    // One 4096-bit chunk of silence is accepted without comment.
    ws.send(frame(BinaryKind::AudioIn, 0, 0, vec![0; 512])).await.unwrap();

    let health = healthz(addr).await;
    assert_eq!(health["status"], "ok");
    let depths = health["sessions"]["live"].as_object().expect("session listed");
    assert!(depths.contains_key("audio"), "{depths:?}");

    // Not a JPEG at all: rejected at the gateway.
    ws.send(frame(BinaryKind::FrameIn, 1, 0, b"garbage".to_vec())).await.unwrap();
    let m = wait_for(&mut ws, |m| matches!(m, JsonMessage::Status { .. })).await;
    assert!(matches!(&m, JsonMessage::Status { code, .. } if code == "bad_frame"), "{m:?}");

    // JPEG markers around garbage: rejected by the decoder, session stays live.
    let mut fake = vec![0xFF, 0xD8];
    fake.extend_from_slice(&[0x12; 64]);
    fake.extend_from_slice(&[0xFF, 0xD9]);
    ws.send(frame(BinaryKind::FrameIn, 2, 40, fake)).await.unwrap();
    let m = wait_for(&mut ws, |m| matches!(m, JsonMessage::Status { .. })).await;
    assert!(matches!(&m, JsonMessage::Status { code, .. } if code == "frame_rejected"), "{m:?}");

    ws.send(Message::Text("{not json".into())).await.unwrap();
    let m = wait_for(&mut ws, |m| matches!(m, JsonMessage::Status { .. })).await;
    assert!(matches!(&m, JsonMessage::Status { code, .. } if code == "bad_message"), "{m:?}");

    ws.send(frame(BinaryKind::AudioOut, 3, 0, vec![0; 8])).await.unwrap();
    let m = wait_for(&mut ws, |m| matches!(m, JsonMessage::Status { .. })).await;
    assert!(matches!(&m, JsonMessage::Status { code, .. } if code == "bad_frame"), "{m:?}");

    // Voice onset interrupts playback.
    let pcm = pcm_to_bytes(&voice_wave(400));
    for (i, c) in pcm.chunks(512).enumerate() {
        ws.send(frame(BinaryKind::AudioIn, 4 + i as u32, 16 * (1 + i as u64), c.to_vec())).await.unwrap();
    }
    let m = wait_for(&mut ws, |m| matches!(m, JsonMessage::Interrupt { .. })).await;
    assert!(matches!(m, JsonMessage::Interrupt { generation: 1, .. }), "{m:?}");

    send_json(&mut ws, json!({"type": "bye", "reason": "done"})).await;
    assert_eq!(bye_reason(&wait_for(&mut ws, |m| matches!(m, JsonMessage::Bye { .. })).await), "closed");
    assert!(next_json(&mut ws).await.is_none());

    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(healthz(addr).await["sessions"], json!({}));
}
