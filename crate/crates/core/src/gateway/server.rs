// SPDX-License-Identifier: Apache-2.0

//! axum server: the session WebSocket and the health endpoint.
//!
//! Each connection runs one reader and one writer task. Media is handed to a
//! blocking ingest thread through a bounded channel, so a saturated pipeline
//! slows the reader down instead of growing memory.

use std::future::Future;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::sync::mpsc;

use super::output::SessionOutput;
use super::session::{SessionLifecycle, SessionRegistry, SessionState};
use super::wire::{BinaryFrame, BinaryKind, JsonMessage, StatusLevel};
use crate::backends::Backends;
use crate::clock::SystemClock;
use crate::ingest::FramePayload;
use crate::pipeline::{LiveSession, NullObserver, Observer};
use crate::{Config, SessionId, PROTOCOL_VERSION};

/// Media messages in flight between the socket reader and the pipeline.
const INGEST_BACKLOG: usize = 64;

#[derive(Clone)]
pub struct ServerState {
    pub cfg: Arc<Config>,
    pub backends: Backends,
    pub registry: SessionRegistry,
    pub observer: Arc<dyn Observer>,
}

impl ServerState {
    pub fn new(cfg: Config, backends: Backends) -> Self {
        Self {
            cfg: Arc::new(cfg),
            backends,
            registry: SessionRegistry::new(),
            observer: Arc::new(NullObserver),
        }
    }
}

pub fn router(state: ServerState) -> Router {
    let ws_path = state.cfg.gateway.ws_path.clone();
    Router::new()
        .route(&ws_path, get(ws_handler))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: ServerState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn healthz(State(state): State<ServerState>) -> Response {
    Json(serde_json::json!({
        "status": "ok",
        "sessions": state.registry.depths(),
    }))
    .into_response()
}

async fn ws_handler(ws: WebSocketUpgrade, State(state): State<ServerState>) -> Response {
    ws.on_upgrade(move |socket| handle_socket(socket, state))
}

async fn send_json(socket: &mut WebSocket, msg: &JsonMessage) -> bool {
    socket.send(Message::Text(msg.to_json().into())).await.is_ok()
}

/// Rejects the connection during the handshake.
async fn reject(mut socket: WebSocket, lifecycle: &mut SessionLifecycle, session: Option<&str>, reason: &str) {
    tracing::info!(session, reason, "rejecting connection");
    let _ = send_json(&mut socket, &JsonMessage::bye(session, reason)).await;
    let _ = socket.send(Message::Close(None)).await;
    let _ = lifecycle.advance(SessionState::Draining);
    let _ = lifecycle.advance(SessionState::Closed);
}

enum Inbound {
    Audio(Vec<u8>),
    Frame(u64, Vec<u8>),
    Finish,
}

/// Cheap structural check; full decoding happens in the video worker.
fn looks_like_jpeg(b: &[u8]) -> bool {
    b.len() >= 4 && b[..2] == [0xFF, 0xD8] && b[b.len() - 2..] == [0xFF, 0xD9]
}

async fn handle_socket(mut socket: WebSocket, state: ServerState) {
    let mut lifecycle = SessionLifecycle::default();

    let first = match socket.recv().await {
        Some(Ok(m)) => m,
        _ => {
            let _ = lifecycle.advance(SessionState::Draining);
            let _ = lifecycle.advance(SessionState::Closed);
            return;
        }
    };
    let (v, session, profile_req) = match first {
        Message::Text(t) => match JsonMessage::from_json(&t) {
            Ok(JsonMessage::Hello { v, session, profile }) => (v, session, profile),
            Ok(_) | Err(_) => return reject(socket, &mut lifecycle, None, "protocol").await,
        },
        Message::Binary(_) => return reject(socket, &mut lifecycle, None, "protocol").await,
        _ => return reject(socket, &mut lifecycle, None, "protocol").await,
    };
    if v != PROTOCOL_VERSION {
        return reject(socket, &mut lifecycle, Some(&session), "version").await;
    }
    if session.is_empty() {
        return reject(socket, &mut lifecycle, None, "session").await;
    }
    let mut cfg = (*state.cfg).clone();
    if let Some(req) = &profile_req {
        cfg.profile = req.apply(&cfg.profile);
        let errs = cfg.profile.validate();
        if !errs.is_empty() {
            tracing::info!(session, "profile rejected: {}", errs.join("; "));
            return reject(socket, &mut lifecycle, Some(&session), "profile").await;
        }
    }
    let id = SessionId::new(&session);
    let registration = match state.registry.register(id.clone()) {
        Ok(r) => r,
        Err(_) => return reject(socket, &mut lifecycle, Some(&session), "duplicate").await,
    };
    let ready = JsonMessage::Ready {
        v: PROTOCOL_VERSION.into(),
        session: session.clone(),
        profile: cfg.profile.clone(),
    };
    if !send_json(&mut socket, &ready).await {
        return;
    }
    lifecycle.advance(SessionState::Live).expect("handshaking to live");
    tracing::info!(session, "session live");

    let cfg = Arc::new(cfg);
    let output = SessionOutput::new(id.clone(), cfg.gateway.outbound_buffer_chunks);
    let live = LiveSession::start(
        id.clone(),
        cfg.clone(),
        state.backends.clone(),
        Arc::new(SystemClock::new()),
        output.clone(),
        state.observer.clone(),
    );
    registration.set_probe(live.depth_probe());

    let (mut sink, mut stream) = socket.split();

    let writer_out = output.clone();
    let writer = tokio::spawn(async move {
        while let Some(m) = writer_out.next().await {
            let msg = match m.encode() {
                Ok(text) => Message::Text(text.into()),
                Err(bin) => Message::Binary(bin.into()),
            };
            if sink.send(msg).await.is_err() {
                tracing::warn!("socket closed while writing; draining session");
                writer_out.close();
                break;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    });

    let (tx, mut rx) = mpsc::channel::<Inbound>(INGEST_BACKLOG);
    let ingest = tokio::task::spawn_blocking(move || {
        let mut graceful = false;
        while let Some(msg) = rx.blocking_recv() {
            let r = match msg {
                Inbound::Audio(b) => live.push_audio_bytes(&b),
                Inbound::Frame(t, b) => live.push_frame(t, FramePayload::Jpeg(b)),
                Inbound::Finish => {
                    graceful = true;
                    break;
                }
            };
            if let Err(e) = r {
                tracing::warn!("ingest stopped: {e}");
                break;
            }
        }
        if graceful {
            if let Err(e) = live.finish() {
                tracing::warn!("session finished with error: {e}");
            }
        } else {
            live.close();
        }
    });

    let status = |code: &str, message: String| {
        output.push_json(JsonMessage::status(Some(&session), StatusLevel::Error, code, message));
    };
    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Binary(bytes) => match BinaryFrame::decode(&bytes) {
                Ok(f) => match f.kind {
                    BinaryKind::AudioIn => {
                        if tx.send(Inbound::Audio(f.body)).await.is_err() {
                            break;
                        }
                    }
                    BinaryKind::FrameIn => {
                        if !looks_like_jpeg(&f.body) {
                            status("bad_frame", format!("frame seq {} is not a JPEG image", f.seq));
                        } else if tx.send(Inbound::Frame(f.t_ms, f.body)).await.is_err() {
                            break;
                        }
                    }
                    BinaryKind::AudioOut => status("bad_frame", "audio-out frames are server-to-client only".into()),
                },
                Err(e) => status("bad_frame", e.to_string()),
            },
            Message::Text(t) => match JsonMessage::from_json(&t) {
                Ok(JsonMessage::Bye { .. }) => {
                    let _ = tx.send(Inbound::Finish).await;
                    break;
                }
                Ok(other) => status(
                    "unexpected_type",
                    format!("{} is not accepted from clients on a live session", other.type_name()),
                ),
                Err(e) => status("bad_message", e.to_string()),
            },
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => {}
        }
    }

    lifecycle.advance(SessionState::Draining).expect("live to draining");
    drop(tx);
    let _ = ingest.await;
    output.push_json(JsonMessage::bye(Some(&session), "closed"));
    output.close();
    let _ = writer.await;
    lifecycle.advance(SessionState::Closed).expect("draining to closed");
    drop(registration);
    tracing::info!(session, "session closed");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jpeg_markers() {
        assert!(looks_like_jpeg(&[0xFF, 0xD8, 0x00, 0xFF, 0xD9]));
        assert!(!looks_like_jpeg(b"not an image"));
        assert!(!looks_like_jpeg(&[0xFF, 0xD8]));
    }
}
