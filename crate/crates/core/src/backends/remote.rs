// SPDX-License-Identifier: Apache-2.0

//! Remote model hosts: JSON over HTTP.
//!
//! Request envelope: `{"role": "<role>", "version": "ol/1", "request": {...}}`.
//! Response envelope: `{"version": "ol/1", "response": {...}}` on success or
//! `{"version": "ol/1", "error": {"message": "..."}}` for application failures.
//! Per-role payload schemas live in `assets/schema/remote/`.
//!
//! Connection failures and HTTP 5xx are retried with exponential backoff
//! (base 100 ms, factor 2, ±20% jitter) up to `max_retries` times. Timeouts,
//! HTTP 4xx, application errors and malformed responses are never retried.

use std::ops::ControlFlow;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    AsrBackend, AsrOutput, BackendDescriptor, BackendError, CompressionInput, CompressorBackend,
    FrameEncoderBackend, GateBackend, IntegrationInput, ReasonerBackend, Role, TtsBackend,
};
use crate::config::FeatureProfile;
use crate::ingest::{bytes_to_pcm, pcm_to_bytes, SAMPLE_RATE_HZ};
use crate::perception::SoundClass;
use crate::reasoning::{AssembledPrompt, GateDecision};
use crate::vad::VoiceSegment;
use crate::{Matrix, PROTOCOL_VERSION};

pub const BACKOFF_BASE_MS: f64 = 100.0;
pub const BACKOFF_FACTOR: f64 = 2.0;
pub const BACKOFF_JITTER: f64 = 0.2;

/// Delay before retry number `attempt` (0-based), before jitter.
pub fn backoff_ms(attempt: u32) -> f64 {
    BACKOFF_BASE_MS * BACKOFF_FACTOR.powi(attempt as i32)
}

/// Counting semaphore bounding concurrent requests per role.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit,
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

enum Attempt {
    Done(Value),
    Transient(String),
    Fatal(BackendError),
}

/// HTTP client for one role.
pub struct RemoteClient {
    role: Role,
    descriptor: BackendDescriptor,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("role", &self.role)
            .field("endpoint", &self.descriptor.endpoint)
            .finish()
    }
}

impl RemoteClient {
    pub fn new(role: Role, descriptor: BackendDescriptor) -> Result<Self, BackendError> {
        let errs = descriptor.validate(role);
        if !errs.is_empty() {
            return Err(BackendError::InvalidArgument(errs.join("; ")));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(descriptor.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            role,
            in_flight: InFlight::new(descriptor.max_in_flight),
            descriptor,
            agent,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Posts `request` and returns the `response` payload of the envelope.
    pub fn call(&self, request: Value) -> Result<Value, BackendError> {
        let _permit = self.in_flight.acquire();
        let envelope = json!({"role": self.role.as_str(), "version": PROTOCOL_VERSION, "request": request});
        let mut attempt = 0u32;
        loop {
            match self.attempt(&envelope) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) if attempt >= self.descriptor.max_retries => {
                    return Err(BackendError::Unavailable(format!(
                        "{} after {} attempt(s): {msg}",
                        self.role,
                        attempt + 1
                    )))
                }
                Attempt::Transient(msg) => {
                    let jitter = rand::thread_rng().gen_range(-BACKOFF_JITTER..=BACKOFF_JITTER);
                    let delay = backoff_ms(attempt) * (1.0 + jitter);
                    tracing::debug!(role = %self.role, attempt, delay_ms = delay, "retrying: {msg}");
                    std::thread::sleep(Duration::from_secs_f64(delay / 1000.0));
                    attempt += 1;
                }
            }
        }
    }

    fn attempt(&self, envelope: &Value) -> Attempt {
        let resp = self.agent.post(&self.descriptor.endpoint).send_json(envelope);
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Fatal(BackendError::Timeout {
                    role: self.role,
                    after_ms: self.descriptor.timeout_ms,
                })
            }
            Err(e @ (ureq::Error::ConnectionFailed | ureq::Error::HostNotFound | ureq::Error::Io(_))) => {
                return Attempt::Transient(e.to_string())
            }
            Err(e) => return Attempt::Fatal(BackendError::Protocol(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status >= 500 {
            return Attempt::Transient(format!("HTTP {status}"));
        }
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Fatal(BackendError::Timeout {
                    role: self.role,
                    after_ms: self.descriptor.timeout_ms,
                })
            }
            Err(e) => return Attempt::Fatal(BackendError::Protocol(e.to_string())),
        };
        if status >= 400 {
            return Attempt::Fatal(BackendError::Application(format!("HTTP {status}: {body}")));
        }
        Attempt::Done(match parse_envelope(&body) {
            Ok(v) => v,
            Err(e) => return Attempt::Fatal(e),
        })
    }

    fn call_typed<T: DeserializeOwned>(&self, request: Value) -> Result<T, BackendError> {
        let v = self.call(request)?;
        serde_json::from_value(v).map_err(|e| BackendError::Protocol(format!("{} response: {e}", self.role)))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseEnvelope {
    version: String,
    #[serde(default)]
    response: Option<Value>,
    #[serde(default)]
    error: Option<ErrorBody>,
}

#[derive(Deserialize)]
struct ErrorBody {
    message: String,
}

fn parse_envelope(body: &str) -> Result<Value, BackendError> {
    let env: ResponseEnvelope =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("malformed envelope: {e}")))?;
    if env.version != PROTOCOL_VERSION {
        return Err(BackendError::Protocol(format!("unsupported version {:?}", env.version)));
    }
    match (env.response, env.error) {
        (_, Some(err)) => Err(BackendError::Application(err.message)),
        (Some(v), None) => Ok(v),
        (None, None) => Err(BackendError::Protocol("envelope has neither response nor error".into())),
    }
}

/// JSON form of a matrix: `{"rows", "cols", "data"}` with `data` row-major.
#[derive(Serialize, Deserialize)]
struct WireMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WireMatrix {
    fn of(m: &Matrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().to_vec(),
        }
    }

    fn into_matrix(self) -> Result<Matrix, BackendError> {
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Protocol("non-finite matrix entry".into()));
        }
        Matrix::new(self.rows, self.cols, self.data).map_err(|e| BackendError::Protocol(e.to_string()))
    }
}

fn expect_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<(), BackendError> {
    if (m.rows(), m.cols()) != (rows, cols) {
        return Err(BackendError::Protocol(format!(
            "{what}: expected {rows}x{cols}, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

pub struct RemoteAsr(pub Arc<RemoteClient>);

#[derive(Deserialize)]
struct AsrResponse {
    sound_class: String,
    #[serde(default)]
    transcript: String,
}

impl AsrBackend for RemoteAsr {
    fn transcribe(&self, segment: &VoiceSegment) -> Result<AsrOutput, BackendError> {
        let r: AsrResponse = self.0.call_typed(json!({
            "segment_id": segment.id,
            "t_start_ms": segment.t_start_ms,
            "t_end_ms": segment.t_end_ms,
            "sample_rate": SAMPLE_RATE_HZ,
            "pcm_b64": B64.encode(pcm_to_bytes(&segment.samples)),
        }))?;
        Ok(AsrOutput {
            sound_class: SoundClass::parse(&r.sound_class),
            transcript: r.transcript,
        })
    }
}

pub struct RemoteFrameEncoder(pub Arc<RemoteClient>);

impl FrameEncoderBackend for RemoteFrameEncoder {
    fn encode(&self, jpeg: &[u8], profile: &FeatureProfile) -> Result<Matrix, BackendError> {
        #[derive(Deserialize)]
        struct R {
            tokens: WireMatrix,
        }
        let r: R = self.0.call_typed(json!({
            "jpeg_b64": B64.encode(jpeg),
            "tokens_per_frame": profile.tokens_per_frame,
            "channels": profile.channels,
        }))?;
        let m = r.tokens.into_matrix()?;
        expect_shape(&m, profile.tokens_per_frame, profile.channels, "frame tokens")?;
        Ok(m)
    }
}

pub struct RemoteCompressor(pub Arc<RemoteClient>);

impl CompressorBackend for RemoteCompressor {
    fn compress(&self, input: CompressionInput<'_>) -> Result<(Matrix, Vec<f64>), BackendError> {
        #[derive(Deserialize)]
        struct R {
            short_term: WireMatrix,
            global: Vec<f64>,
        }
        let r: R = self.0.call_typed(json!({
            "op": "compress",
            "features": WireMatrix::of(input.features),
            "short_term": WireMatrix::of(input.short_term),
            "global": input.global,
        }))?;
        let h = r.short_term.into_matrix()?;
        expect_shape(&h, input.short_term.rows(), input.short_term.cols(), "short-term memory")?;
        if r.global.len() != input.global.len() || r.global.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Protocol("global memory has wrong length or non-finite entries".into()));
        }
        Ok((h, r.global))
    }

    fn integrate(&self, input: &IntegrationInput<'_>) -> Result<Matrix, BackendError> {
        #[derive(Deserialize)]
        struct R {
            long_term: WireMatrix,
        }
        let short: Vec<WireMatrix> = input.short_term.iter().map(|m| WireMatrix::of(m)).collect();
        let r: R = self.0.call_typed(json!({
            "op": "integrate",
            "short_term": short,
            "globals": input.globals,
        }))?;
        let m = r.long_term.into_matrix()?;
        let cols = input.short_term.first().map_or(m.cols(), |h| h.cols());
        expect_shape(&m, input.short_term.len(), cols, "long-term memory")?;
        Ok(m)
    }

    fn encode_question(&self, long_term: &Matrix, tokens: &[String], channels: usize) -> Result<Vec<f64>, BackendError> {
        #[derive(Deserialize)]
        struct R {
            vector: Vec<f64>,
        }
        let r: R = self.0.call_typed(json!({
            "op": "encode_question",
            "long_term": WireMatrix::of(long_term),
            "tokens": tokens,
            "channels": channels,
        }))?;
        if r.vector.len() != channels || r.vector.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Protocol("question vector has wrong length or non-finite entries".into()));
        }
        Ok(r.vector)
    }
}

pub struct RemoteGate(pub Arc<RemoteClient>);

impl GateBackend for RemoteGate {
    fn predict(&self, transcript: &str) -> Result<GateDecision, BackendError> {
        self.0.call_typed(json!({ "transcript": transcript }))
    }
}

pub struct RemoteReasoner(pub Arc<RemoteClient>);

impl ReasonerBackend for RemoteReasoner {
    fn generate(
        &self,
        prompt: &AssembledPrompt,
        emit: &mut dyn FnMut(&str) -> ControlFlow<()>,
    ) -> Result<(), BackendError> {
        #[derive(Deserialize)]
        struct R {
            text: String,
        }
        let r: R = self.0.call_typed(json!({ "prompt": prompt }))?;
        for word in r.text.split_inclusive(' ') {
            if emit(word).is_break() {
                break;
            }
        }
        Ok(())
    }
}

pub struct RemoteTts(pub Arc<RemoteClient>);

impl TtsBackend for RemoteTts {
    fn synthesize(&self, text: &str) -> Result<Vec<i16>, BackendError> {
        #[derive(Deserialize)]
        struct R {
            pcm_b64: String,
        }
        let r: R = self.0.call_typed(json!({ "text": text, "sample_rate": SAMPLE_RATE_HZ }))?;
        let bytes = B64
            .decode(r.pcm_b64)
            .map_err(|e| BackendError::Protocol(format!("pcm_b64: {e}")))?;
        if bytes.len() % 2 != 0 {
            return Err(BackendError::Protocol("pcm_b64 has an odd byte count".into()));
        }
        Ok(bytes_to_pcm(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_schedule() {
        assert_eq!(backoff_ms(0), 100.0);
        assert_eq!(backoff_ms(1), 200.0);
        assert_eq!(backoff_ms(3), 800.0);
    }

    #[test]
    fn envelope_parsing() {
        assert_eq!(
            parse_envelope(r#"{"version":"ol/1","response":{"x":1}}"#).unwrap(),
            json!({"x":1})
        );
        assert!(matches!(
            parse_envelope(r#"{"version":"ol/1","error":{"message":"nope"}}"#),
            Err(BackendError::Application(m)) if m == "nope"
        ));
        assert!(matches!(parse_envelope("{"), Err(BackendError::Protocol(_))));
        assert!(matches!(
            parse_envelope(r#"{"version":"ol/2","response":{}}"#),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn in_flight_limit_blocks_until_release() {
        let sem = Arc::new(InFlight::new(1));
        let held = sem.acquire();
        let s2 = sem.clone();
        let t = std::thread::spawn(move || {
            let _p = s2.acquire();
        });
        std::thread::sleep(Duration::from_millis(20));
        assert!(!t.is_finished());
        drop(held);
        t.join().unwrap();
    }
}
