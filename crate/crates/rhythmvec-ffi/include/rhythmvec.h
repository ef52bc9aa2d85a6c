#ifndef RHYTHMVEC_H
#define RHYTHMVEC_H

/* Generated by cbindgen from the rhythmvec-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of a fallible call.
typedef enum RvecStatus {
  RVEC_STATUS_OK = 0,
  RVEC_STATUS_NULL_POINTER = 1,
  RVEC_STATUS_INVALID_ARGUMENT = 2,
  RVEC_STATUS_PARSE_ERROR = 3,
  RVEC_STATUS_SHAPE_MISMATCH = 4,
  RVEC_STATUS_INFEASIBLE = 5,
  RVEC_STATUS_IO_ERROR = 6,
  RVEC_STATUS_CHECKPOINT_ERROR = 7,
  RVEC_STATUS_INTERNAL_ERROR = 8,
} RvecStatus;

// Opaque corpus handle.
typedef struct RvecCorpus RvecCorpus;

// Opaque duration-model handle.
typedef struct RvecDurationModel RvecDurationModel;

// Opaque speaker-model handle.
typedef struct RvecSpeakerModel RvecSpeakerModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent error on this thread. Valid until the next
// failing call on the same thread; never null.
const char *rvec_last_error(void);

// Library version string (static storage).
const char *rvec_version(void);

// Load a JSON-lines corpus file. Returns null on failure (see
// `rvec_last_error`).
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string.
struct RvecCorpus *rvec_corpus_load(const char *path);

// Parse a corpus from an in-memory JSON-lines buffer.
//
// # Safety
// `bytes` must point to `len` readable bytes.
struct RvecCorpus *rvec_corpus_parse(const uint8_t *bytes, size_t len);

// Generate a synthetic corpus from a generator spec (JSON, SynthSpec
// schema). Returns null on failure.
//
// # Safety
// `spec_json` must be a NUL-terminated UTF-8 string.
struct RvecCorpus *rvec_corpus_generate(const char *spec_json);

// Write a corpus in canonical JSON-lines form.
//
// # Safety
// `corpus` must be a live handle from this library; `path` a NUL-terminated
// UTF-8 string.
enum RvecStatus rvec_corpus_save(const struct RvecCorpus *corpus, const char *path);

// Number of utterances.
//
// # Safety
// `corpus` must be a live handle from this library.
size_t rvec_corpus_num_utterances(const struct RvecCorpus *corpus);

// Number of distinct speakers.
//
// # Safety
// `corpus` must be a live handle from this library.
size_t rvec_corpus_num_speakers(const struct RvecCorpus *corpus);

// Free a corpus handle (null is allowed).
//
// # Safety
// `corpus` must be null or a handle returned by this library, not yet freed.
void rvec_corpus_free(struct RvecCorpus *corpus);

// Load a speaker checkpoint (RVEC1 container). Returns null on failure.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string.
struct RvecSpeakerModel *rvec_speaker_model_load(const char *path);

// Embedding width of a loaded speaker model (0 for null).
//
// # Safety
// `model` must be a live handle from this library.
size_t rvec_speaker_embed_dim(const struct RvecSpeakerModel *model);

// Phoneme inventory size K of a loaded speaker model (0 for null).
//
// # Safety
// `model` must be a live handle from this library.
size_t rvec_speaker_inventory_size(const struct RvecSpeakerModel *model);

// Extract the rhythm embedding of one utterance.
//
// `phoneme_ids` are indices into the model's inventory; `durations_s` are
// per-phoneme durations in seconds. `out` must hold `rvec_speaker_embed_dim`
// doubles.
//
// # Safety
// `model` must be a live handle; the arrays must match the documented
// lengths and be readable/writable.
enum RvecStatus rvec_speaker_embed(const struct RvecSpeakerModel *model,
                                   const uint32_t *phoneme_ids,
                                   const double *durations_s,
                                   size_t len,
                                   double *out);

// Free a speaker-model handle (null is allowed).
//
// # Safety
// `model` must be null or a handle returned by this library, not yet freed.
void rvec_speaker_model_free(struct RvecSpeakerModel *model);

// Load a duration checkpoint (RVEC1 container). Returns null on failure.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string.
struct RvecDurationModel *rvec_duration_model_load(const char *path);

// Speaker-embedding width the duration model expects (0 for null).
//
// # Safety
// `model` must be a live handle from this library.
size_t rvec_duration_embed_dim(const struct RvecDurationModel *model);

// Predict per-phoneme durations (seconds, >= 0.001) for a phoneme sequence
// under a speaker embedding. `out` must hold `len` doubles.
//
// # Safety
// `model` must be a live handle; array arguments must match the documented
// lengths and be readable/writable.
enum RvecStatus rvec_duration_predict(const struct RvecDurationModel *model,
                                      const uint32_t *phoneme_ids,
                                      size_t len,
                                      const double *embedding,
                                      size_t embedding_dim,
                                      double *out);

// Free a duration-model handle (null is allowed).
//
// # Safety
// `model` must be null or a handle returned by this library, not yet freed.
void rvec_duration_model_free(struct RvecDurationModel *model);

// Cosine similarity of two `len`-dimensional vectors.
//
// # Safety
// `a`, `b`, and `out` must be readable/writable for the documented lengths.
enum RvecStatus rvec_cosine_similarity(const double *a, const double *b, size_t len, double *out);

// Equal error rate of verification scores. `labels[i]` is nonzero for
// same-speaker trials. `out_threshold` may be null.
//
// # Safety
// `scores` and `labels` must hold `len` readable elements; out pointers,
// when non-null, must be writable.
enum RvecStatus rvec_eer(const double *scores,
                         const uint8_t *labels,
                         size_t len,
                         double *out_eer,
                         double *out_threshold);

// Pearson correlation of paired samples.
//
// # Safety
// `xs`, `ys`, and `out` must be readable/writable for the documented lengths.
enum RvecStatus rvec_pearson(const double *xs, const double *ys, size_t len, double *out);

// Maximal information coefficient of paired samples (len >= 10).
//
// # Safety
// `xs`, `ys`, and `out` must be readable/writable for the documented lengths.
enum RvecStatus rvec_mic(const double *xs, const double *ys, size_t len, double *out);

// Speaking rate (phonemes/sec) of a duration sequence in seconds.
//
// # Safety
// `durations_s` must hold `len` readable doubles; `out` must be writable.
enum RvecStatus rvec_speaking_rate(const double *durations_s, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RHYTHMVEC_H */
