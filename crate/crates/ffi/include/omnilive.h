/* SPDX-License-Identifier: Apache-2.0 */

#ifndef OMNILIVE_H
#define OMNILIVE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum OlStatus {
  OL_STATUS_OK = 0,
  OL_STATUS_NULL_POINTER = 1,
  OL_STATUS_INVALID_ARGUMENT = 2,
  OL_STATUS_SHAPE = 3,
  OL_STATUS_OUT_OF_ORDER = 4,
  OL_STATUS_BUFFER_TOO_SMALL = 5,
  OL_STATUS_BACKEND = 6,
  OL_STATUS_PANIC = 7,
} OlStatus;

typedef enum OlVadEventKind {
  OL_VAD_EVENT_KIND_VOICE_START = 1,
  OL_VAD_EVENT_KIND_VOICE_END = 2,
} OlVadEventKind;

// Memory bank using the reference compressor.
typedef struct OlMemoryBank OlMemoryBank;

// Immutable view of a bank at a point in time.
typedef struct OlSnapshot OlSnapshot;

// Chunker plus voice activity detector over one 16 kHz mono stream.
typedef struct OlVad OlVad;

// Memory bank shape and policy.
typedef struct OlBankConfig {
  // `N`: feature rows per frame.
  size_t tokens_per_frame;
  // `P`: short-term memory rows per frame; must divide `N`.
  size_t memory_tokens_per_frame;
  // `C`: channels, at least 2.
  size_t channels;
  // Short-term memories fed to each integration pass.
  size_t window;
} OlBankConfig;

// Detector thresholds; all durations are multiples of 16 ms.
typedef struct OlVadConfig {
  double energy_threshold;
  uint64_t onset_min_ms;
  uint64_t hangover_ms;
  uint64_t max_segment_ms;
} OlVadConfig;

// One detector event. For `VoiceStart` only `t_ms` is meaningful; for
// `VoiceEnd` the segment fields are filled and `t_ms == t_end_ms`.
typedef struct OlVadEvent {
  enum OlVadEventKind kind;
  uint64_t t_ms;
  uint64_t segment_id;
  uint64_t t_start_ms;
  uint64_t t_end_ms;
} OlVadEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or NULL. Valid until the
// next call into this library on the same thread.
const char *ol_last_error_message(void);

// Wire protocol version, a static NUL-terminated string.
const char *ol_protocol_version(void);

// Writes the `dim`-component hashed unit vector of `key` into `out`.
//
// # Safety
// `key` must point to `key_len` readable bytes (or be NULL with
// `key_len == 0`) and `out` to `dim` writable doubles.
enum OlStatus ol_hashed_vector(const uint8_t *key, size_t key_len, double *out, size_t dim);

// Creates a bank. `*out` receives the handle.
//
// # Safety
// `cfg` and `out` must be valid pointers.
enum OlStatus ol_memory_bank_new(const struct OlBankConfig *cfg, struct OlMemoryBank **out);

// # Safety
// `bank` must be NULL or a handle from [`ol_memory_bank_new`] not yet freed.
void ol_memory_bank_free(struct OlMemoryBank *bank);

// Number of clips ingested so far, or 0 for NULL.
//
// # Safety
// `bank` must be NULL or a live handle.
size_t ol_memory_bank_len(const struct OlMemoryBank *bank);

// Ingests the next clip. `features` is row-major `rows x cols`, with
// `rows = frames * tokens_per_frame`; `frame_t_ms` holds one capture time per
// frame. The clip index is the bank's current length.
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum OlStatus ol_memory_bank_ingest(struct OlMemoryBank *bank,
                                    uint64_t t_start_ms,
                                    uint64_t t_end_ms,
                                    const uint64_t *frame_t_ms,
                                    size_t frames,
                                    const double *features,
                                    size_t rows,
                                    size_t cols);

// Snapshot of the clips finished by `t_ms`.
//
// # Safety
// `bank` must be a live handle and `out` writable.
enum OlStatus ol_memory_bank_snapshot(const struct OlMemoryBank *bank,
                                      uint64_t t_ms,
                                      struct OlSnapshot **out);

// # Safety
// `snap` must be NULL or a handle from [`ol_memory_bank_snapshot`] not yet freed.
void ol_snapshot_free(struct OlSnapshot *snap);

// Clips visible in the snapshot, or 0 for NULL.
//
// # Safety
// `snap` must be NULL or a live handle.
size_t ol_snapshot_len(const struct OlSnapshot *snap);

// Writes the 64-hex-digit content hash plus a NUL into `buf` (at least 65
// bytes).
//
// # Safety
// `buf` must point to `buf_len` writable bytes.
enum OlStatus ol_snapshot_content_hash(const struct OlSnapshot *snap, char *buf, size_t buf_len);

// Reference question vector for a UTF-8 question, `dim` = bank channels.
//
// # Safety
// `question` must be a NUL-terminated string and `out` hold `dim` doubles.
enum OlStatus ol_snapshot_encode_question(const struct OlSnapshot *snap,
                                          const char *question,
                                          double *out,
                                          size_t dim);

// Ranks the snapshot's clips for question vector `q`. Up to `capacity`
// results are written to `out_clips`/`out_scores` (either may be NULL when
// `capacity` is 0); `*out_len` receives the number written.
//
// # Safety
// Pointers must reference buffers of the stated sizes.
enum OlStatus ol_snapshot_retrieve(const struct OlSnapshot *snap,
                                   const double *q,
                                   size_t dim,
                                   size_t top_k,
                                   double recency_bonus,
                                   uint64_t *out_clips,
                                   double *out_scores,
                                   size_t capacity,
                                   size_t *out_len);

// Default detector thresholds.
struct OlVadConfig ol_vad_config_default(void);

// Creates a detector; `cfg` may be NULL for defaults.
//
// # Safety
// `cfg` must be NULL or valid; `out` must be writable.
enum OlStatus ol_vad_new(const struct OlVadConfig *cfg, struct OlVad **out);

// # Safety
// `vad` must be NULL or a handle from [`ol_vad_new`] not yet freed.
void ol_vad_free(struct OlVad *vad);

// Feeds samples and returns the events they complete. Events that do not
// fit in `events` stay queued and are returned first by the next call (pass
// zero samples to collect them).
//
// # Safety
// `samples` must hold `n` values and `events` `capacity` entries.
enum OlStatus ol_vad_push(struct OlVad *vad,
                          const int16_t *samples,
                          size_t n,
                          struct OlVadEvent *events,
                          size_t capacity,
                          size_t *out_len);

// Ends the stream: processes the trailing partial chunk and closes any open
// segment.
//
// # Safety
// As for [`ol_vad_push`].
enum OlStatus ol_vad_flush(struct OlVad *vad,
                           struct OlVadEvent *events,
                           size_t capacity,
                           size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OMNILIVE_H */
