// SPDX-License-Identifier: Apache-2.0

//! C ABI over the deterministic core primitives: hashed vectors, the memory
//! bank with its snapshots and retrieval, and the voice activity detector.
//!
//! Conventions:
//! * every fallible function returns an [`OlStatus`]; on failure a message is
//!   available from [`ol_last_error_message`] on the same thread;
//! * handles are opaque and owned by the caller, who frees them with the
//!   matching `_free` function (passing NULL is a no-op);
//! * output buffers are caller-allocated; capacity shortfalls return
//!   `OL_STATUS_BUFFER_TOO_SMALL` with the required size written back where
//!   the signature allows it;
//! * panics never cross the boundary and surface as `OL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use omnilive::backends::{hashed_vector, CompressorBackend, ReferenceCompressor};
use omnilive::config::{FeatureProfile, MemoryConfig};
use omnilive::ingest::{Chunker, FrameRef};
use omnilive::memory::{encode_question, retrieve, MemoryBank, MemoryError, MemorySnapshot, QuestionFeature};
use omnilive::perception::ClipFeatures;
use omnilive::vad::{Vad, VadConfig, VadError, VadEvent};
use omnilive::{Matrix, SessionId};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    OutOfOrder = 4,
    BufferTooSmall = 5,
    Backend = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: OlStatus, msg: impl Into<String>) -> OlStatus {
    set_error(msg);
    status
}

fn memory_status(e: &MemoryError) -> OlStatus {
    match e {
        MemoryError::Shape(_) => OlStatus::Shape,
        MemoryError::Backend(_) => OlStatus::Backend,
        _ => OlStatus::InvalidArgument,
    }
}

/// Runs `f`, converting panics into `OL_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> OlStatus) -> OlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(OlStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

/// Builds a slice from a possibly-null pointer; `len == 0` accepts NULL.
unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize) -> Option<&'a mut [T]> {
    if len == 0 {
        Some(&mut [])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(p, len))
    }
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ol_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Wire protocol version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ol_protocol_version() -> *const c_char {
    static V: &CStr = c"ol/1";
    V.as_ptr()
}

/// Writes the `dim`-component hashed unit vector of `key` into `out`.
///
/// # Safety
/// `key` must point to `key_len` readable bytes (or be NULL with
/// `key_len == 0`) and `out` to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_hashed_vector(key: *const u8, key_len: usize, out: *mut f64, dim: usize) -> OlStatus {
    guard(|| {
        let (Some(key), Some(out)) = (slice(key, key_len), slice_mut(out, dim)) else {
            return fail(OlStatus::NullPointer, "key or out is NULL");
        };
        match hashed_vector(key, dim) {
            Ok(v) => {
                out.copy_from_slice(&v);
                OlStatus::Ok
            }
            Err(e) => fail(OlStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Memory bank shape and policy.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OlBankConfig {
    /// `N`: feature rows per frame.
    pub tokens_per_frame: usize,
    /// `P`: short-term memory rows per frame; must divide `N`.
    pub memory_tokens_per_frame: usize,
    /// `C`: channels, at least 2.
    pub channels: usize,
    /// Short-term memories fed to each integration pass.
    pub window: usize,
}

/// Memory bank using the reference compressor.
pub struct OlMemoryBank {
    bank: MemoryBank,
    /// Sequence number given to the next ingested frame.
    next_frame_seq: u64,
}

/// Immutable view of a bank at a point in time.
pub struct OlSnapshot {
    snap: MemorySnapshot,
}

/// Creates a bank. `*out` receives the handle.
///
/// # Safety
/// `cfg` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ol_memory_bank_new(cfg: *const OlBankConfig, out: *mut *mut OlMemoryBank) -> OlStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(OlStatus::NullPointer, "cfg or out is NULL");
        }
        let cfg = *cfg;
        let profile = FeatureProfile {
            tokens_per_frame: cfg.tokens_per_frame,
            memory_tokens_per_frame: cfg.memory_tokens_per_frame,
            channels: cfg.channels,
            ..FeatureProfile::default()
        };
        let errs = profile.validate();
        if !errs.is_empty() {
            return fail(OlStatus::InvalidArgument, errs.join("; "));
        }
        if cfg.window == 0 {
            return fail(OlStatus::InvalidArgument, "window must be positive");
        }
        let mem = MemoryConfig {
            window: cfg.window,
            ..MemoryConfig::default()
        };
        let bank = MemoryBank::new(profile, mem, Arc::new(ReferenceCompressor));
        *out = Box::into_raw(Box::new(OlMemoryBank { bank, next_frame_seq: 0 }));
        OlStatus::Ok
    })
}

/// # Safety
/// `bank` must be NULL or a handle from [`ol_memory_bank_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ol_memory_bank_free(bank: *mut OlMemoryBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of clips ingested so far, or 0 for NULL.
///
/// # Safety
/// `bank` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ol_memory_bank_len(bank: *const OlMemoryBank) -> usize {
    bank.as_ref().map_or(0, |b| b.bank.len())
}

/// Ingests the next clip. `features` is row-major `rows x cols`, with
/// `rows = frames * tokens_per_frame`; `frame_t_ms` holds one capture time per
/// frame. The clip index is the bank's current length.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ol_memory_bank_ingest(
    bank: *mut OlMemoryBank,
    t_start_ms: u64,
    t_end_ms: u64,
    frame_t_ms: *const u64,
    frames: usize,
    features: *const f64,
    rows: usize,
    cols: usize,
) -> OlStatus {
    guard(|| {
        let Some(bank) = bank.as_mut() else {
            return fail(OlStatus::NullPointer, "bank is NULL");
        };
        let Some(n) = rows.checked_mul(cols) else {
            return fail(OlStatus::Shape, "rows * cols overflows");
        };
        let (Some(ts), Some(data)) = (slice(frame_t_ms, frames), slice(features, n)) else {
            return fail(OlStatus::NullPointer, "frame_t_ms or features is NULL");
        };
        if t_end_ms < t_start_ms {
            return fail(OlStatus::InvalidArgument, "t_end_ms precedes t_start_ms");
        }
        let features = match Matrix::new(rows, cols, data.to_vec()) {
            Ok(m) => m,
            Err(e) => return fail(OlStatus::Shape, e.to_string()),
        };
        let clip_index = bank.bank.len() as u64;
        let base = bank.next_frame_seq;
        let clip = ClipFeatures {
            clip_index,
            t_start_ms,
            t_end_ms,
            frames: ts
                .iter()
                .enumerate()
                .map(|(j, &t)| FrameRef {
                    seq: base + j as u64,
                    t_ms: t,
                })
                .collect(),
            features,
        };
        match bank.bank.ingest(&clip) {
            Ok(_) => {
                bank.next_frame_seq += frames as u64;
                OlStatus::Ok
            }
            Err(e) => fail(memory_status(&e), e.to_string()),
        }
    })
}

/// Snapshot of the clips finished by `t_ms`.
///
/// # Safety
/// `bank` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ol_memory_bank_snapshot(
    bank: *const OlMemoryBank,
    t_ms: u64,
    out: *mut *mut OlSnapshot,
) -> OlStatus {
    guard(|| {
        let Some(bank) = bank.as_ref() else {
            return fail(OlStatus::NullPointer, "bank is NULL");
        };
        if out.is_null() {
            return fail(OlStatus::NullPointer, "out is NULL");
        }
        match bank.bank.snapshot(t_ms) {
            Ok(snap) => {
                *out = Box::into_raw(Box::new(OlSnapshot { snap }));
                OlStatus::Ok
            }
            Err(e) => fail(memory_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `snap` must be NULL or a handle from [`ol_memory_bank_snapshot`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ol_snapshot_free(snap: *mut OlSnapshot) {
    if !snap.is_null() {
        drop(Box::from_raw(snap));
    }
}

/// Clips visible in the snapshot, or 0 for NULL.
///
/// # Safety
/// `snap` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ol_snapshot_len(snap: *const OlSnapshot) -> usize {
    snap.as_ref().map_or(0, |s| s.snap.len())
}

/// Writes the 64-hex-digit content hash plus a NUL into `buf` (at least 65
/// bytes).
///
/// # Safety
/// `buf` must point to `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ol_snapshot_content_hash(snap: *const OlSnapshot, buf: *mut c_char, buf_len: usize) -> OlStatus {
    guard(|| {
        let Some(snap) = snap.as_ref() else {
            return fail(OlStatus::NullPointer, "snapshot is NULL");
        };
        let Some(buf) = slice_mut(buf.cast::<u8>(), buf_len) else {
            return fail(OlStatus::NullPointer, "buf is NULL");
        };
        let hash = snap.snap.content_hash();
        if buf.len() <= hash.len() {
            return fail(OlStatus::BufferTooSmall, format!("need {} bytes", hash.len() + 1));
        }
        buf[..hash.len()].copy_from_slice(hash.as_bytes());
        buf[hash.len()] = 0;
        OlStatus::Ok
    })
}

/// Reference question vector for a UTF-8 question, `dim` = bank channels.
///
/// # Safety
/// `question` must be a NUL-terminated string and `out` hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_snapshot_encode_question(
    snap: *const OlSnapshot,
    question: *const c_char,
    out: *mut f64,
    dim: usize,
) -> OlStatus {
    guard(|| {
        let Some(snap) = snap.as_ref() else {
            return fail(OlStatus::NullPointer, "snapshot is NULL");
        };
        if question.is_null() {
            return fail(OlStatus::NullPointer, "question is NULL");
        }
        let Ok(text) = CStr::from_ptr(question).to_str() else {
            return fail(OlStatus::InvalidArgument, "question is not UTF-8");
        };
        let Some(out) = slice_mut(out, dim) else {
            return fail(OlStatus::NullPointer, "out is NULL");
        };
        let backend: &dyn CompressorBackend = &ReferenceCompressor;
        match encode_question(snap.snap.long_term(), text, dim, backend) {
            Ok(q) => {
                out.copy_from_slice(&q.q);
                OlStatus::Ok
            }
            Err(e) => fail(memory_status(&e), e.to_string()),
        }
    })
}

/// Ranks the snapshot's clips for question vector `q`. Up to `capacity`
/// results are written to `out_clips`/`out_scores` (either may be NULL when
/// `capacity` is 0); `*out_len` receives the number written.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ol_snapshot_retrieve(
    snap: *const OlSnapshot,
    q: *const f64,
    dim: usize,
    top_k: usize,
    recency_bonus: f64,
    out_clips: *mut u64,
    out_scores: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> OlStatus {
    guard(|| {
        let Some(snap) = snap.as_ref() else {
            return fail(OlStatus::NullPointer, "snapshot is NULL");
        };
        let (Some(q), Some(clips), Some(scores)) =
            (slice(q, dim), slice_mut(out_clips, capacity), slice_mut(out_scores, capacity))
        else {
            return fail(OlStatus::NullPointer, "q or an output buffer is NULL");
        };
        if out_len.is_null() {
            return fail(OlStatus::NullPointer, "out_len is NULL");
        }
        if !(recency_bonus >= 0.0 && recency_bonus.is_finite()) {
            return fail(OlStatus::InvalidArgument, "recency_bonus must be finite and non-negative");
        }
        if !snap.snap.is_empty() && snap.snap.clips()[0].global.len() != dim {
            return fail(OlStatus::Shape, format!("question has {dim} components, bank has {}", snap.snap.clips()[0].global.len()));
        }
        let feature = QuestionFeature {
            q: q.to_vec(),
            text: String::new(),
        };
        let r = match retrieve(&feature, &snap.snap, top_k, recency_bonus) {
            Ok(r) => r,
            Err(e) => return fail(memory_status(&e), e.to_string()),
        };
        *out_len = 0;
        if r.clips.len() > capacity {
            *out_len = r.clips.len();
            return fail(OlStatus::BufferTooSmall, format!("need room for {} results", r.clips.len()));
        }
        for (i, c) in r.clips.iter().enumerate() {
            clips[i] = c.clip_index;
            scores[i] = c.score;
        }
        *out_len = r.clips.len();
        OlStatus::Ok
    })
}

/// Detector thresholds; all durations are multiples of 16 ms.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OlVadConfig {
    pub energy_threshold: f64,
    pub onset_min_ms: u64,
    pub hangover_ms: u64,
    pub max_segment_ms: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OlVadEventKind {
    VoiceStart = 1,
    VoiceEnd = 2,
}

/// One detector event. For `VoiceStart` only `t_ms` is meaningful; for
/// `VoiceEnd` the segment fields are filled and `t_ms == t_end_ms`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OlVadEvent {
    pub kind: OlVadEventKind,
    pub t_ms: u64,
    pub segment_id: u64,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
}

/// Chunker plus voice activity detector over one 16 kHz mono stream.
pub struct OlVad {
    chunker: Chunker,
    vad: Vad,
    /// Events produced but not yet handed to the caller.
    pending: Vec<OlVadEvent>,
}

/// Default detector thresholds.
#[no_mangle]
pub extern "C" fn ol_vad_config_default() -> OlVadConfig {
    let d = VadConfig::default();
    OlVadConfig {
        energy_threshold: d.energy_threshold,
        onset_min_ms: d.onset_min_ms,
        hangover_ms: d.hangover_ms,
        max_segment_ms: d.max_segment_ms,
    }
}

/// Creates a detector; `cfg` may be NULL for defaults.
///
/// # Safety
/// `cfg` must be NULL or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ol_vad_new(cfg: *const OlVadConfig, out: *mut *mut OlVad) -> OlStatus {
    guard(|| {
        if out.is_null() {
            return fail(OlStatus::NullPointer, "out is NULL");
        }
        let c = cfg.as_ref().copied().unwrap_or_else(|| ol_vad_config_default());
        let vc = VadConfig {
            energy_threshold: c.energy_threshold,
            onset_min_ms: c.onset_min_ms,
            hangover_ms: c.hangover_ms,
            max_segment_ms: c.max_segment_ms,
        };
        let errs = vc.validate();
        if !errs.is_empty() {
            return fail(OlStatus::InvalidArgument, errs.join("; "));
        }
        let id = SessionId::new("ffi");
        *out = Box::into_raw(Box::new(OlVad {
            chunker: Chunker::new(id.clone()),
            vad: Vad::new(id, vc),
            pending: Vec::new(),
        }));
        OlStatus::Ok
    })
}

/// # Safety
/// `vad` must be NULL or a handle from [`ol_vad_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ol_vad_free(vad: *mut OlVad) {
    if !vad.is_null() {
        drop(Box::from_raw(vad));
    }
}

fn convert(e: VadEvent) -> OlVadEvent {
    match e {
        VadEvent::VoiceStart { t_ms } => OlVadEvent {
            kind: OlVadEventKind::VoiceStart,
            t_ms,
            segment_id: 0,
            t_start_ms: 0,
            t_end_ms: 0,
        },
        VadEvent::VoiceEnd { segment } => OlVadEvent {
            kind: OlVadEventKind::VoiceEnd,
            t_ms: segment.t_end_ms,
            segment_id: segment.id,
            t_start_ms: segment.t_start_ms,
            t_end_ms: segment.t_end_ms,
        },
    }
}

fn vad_status(e: &VadError) -> OlStatus {
    match e {
        VadError::OutOfOrder { .. } => OlStatus::OutOfOrder,
        VadError::Faulted => OlStatus::InvalidArgument,
    }
}

/// Moves pending events into `events`; returns BufferTooSmall with the
/// remainder kept for the next call when they do not fit.
unsafe fn drain(v: &mut OlVad, events: *mut OlVadEvent, capacity: usize, out_len: *mut usize) -> OlStatus {
    let Some(buf) = slice_mut(events, capacity) else {
        return fail(OlStatus::NullPointer, "events is NULL");
    };
    let n = v.pending.len().min(capacity);
    for (dst, src) in buf.iter_mut().zip(v.pending.drain(..n)) {
        *dst = src;
    }
    *out_len = n;
    if v.pending.is_empty() {
        OlStatus::Ok
    } else {
        fail(OlStatus::BufferTooSmall, format!("{} more event(s) pending", v.pending.len()))
    }
}

/// Feeds samples and returns the events they complete. Events that do not
/// fit in `events` stay queued and are returned first by the next call (pass
/// zero samples to collect them).
///
/// # Safety
/// `samples` must hold `n` values and `events` `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn ol_vad_push(
    vad: *mut OlVad,
    samples: *const i16,
    n: usize,
    events: *mut OlVadEvent,
    capacity: usize,
    out_len: *mut usize,
) -> OlStatus {
    guard(|| {
        let Some(v) = vad.as_mut() else {
            return fail(OlStatus::NullPointer, "vad is NULL");
        };
        if out_len.is_null() {
            return fail(OlStatus::NullPointer, "out_len is NULL");
        }
        *out_len = 0;
        let Some(samples) = slice(samples, n) else {
            return fail(OlStatus::NullPointer, "samples is NULL");
        };
        let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        for chunk in v.chunker.push(&bytes) {
            match v.vad.process_chunk(&chunk) {
                Ok(evs) => v.pending.extend(evs.into_iter().map(convert)),
                Err(e) => return fail(vad_status(&e), e.to_string()),
            }
        }
        drain(v, events, capacity, out_len)
    })
}

/// Ends the stream: processes the trailing partial chunk and closes any open
/// segment.
///
/// # Safety
/// As for [`ol_vad_push`].
#[no_mangle]
pub unsafe extern "C" fn ol_vad_flush(
    vad: *mut OlVad,
    events: *mut OlVadEvent,
    capacity: usize,
    out_len: *mut usize,
) -> OlStatus {
    guard(|| {
        let Some(v) = vad.as_mut() else {
            return fail(OlStatus::NullPointer, "vad is NULL");
        };
        if out_len.is_null() {
            return fail(OlStatus::NullPointer, "out_len is NULL");
        }
        *out_len = 0;
        match v.chunker.finish() {
            Ok(Some(chunk)) => match v.vad.process_chunk(&chunk) {
                Ok(evs) => v.pending.extend(evs.into_iter().map(convert)),
                Err(e) => return fail(vad_status(&e), e.to_string()),
            },
            Ok(None) => {}
            Err(e) => return fail(OlStatus::InvalidArgument, e.to_string()),
        }
        v.pending.extend(v.vad.flush().map(convert));
        drain(v, events, capacity, out_len)
    })
}
