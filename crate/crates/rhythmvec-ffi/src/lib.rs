//! C ABI for the rhythmvec library.
//!
//! Conventions:
//! - Handles (`RvecCorpus`, `RvecSpeakerModel`, `RvecDurationModel`) are
//!   opaque pointers created and freed by this library.
//! - Fallible calls return an [`RvecStatus`]; `RVEC_STATUS_OK` is 0. The
//!   message of the most recent failure on the current thread is available
//!   via `rvec_last_error`.
//! - Strings are NUL-terminated UTF-8. Buffers are caller-allocated; the
//!   documented capacity per call must be respected.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rhythmvec::checkpoint::ModelCheckpoint;
use rhythmvec::corpus::{
    corpus_from_jsonl, corpus_to_jsonl, generate_synthetic_corpus, Corpus, SynthSpec, Utterance,
};
use rhythmvec::dur_model::DurationModel;
use rhythmvec::error::Error;
use rhythmvec::metrics;
use rhythmvec::spk_model::{Embedding, SpeakerModel};

/// Result code of a fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RvecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    ShapeMismatch = 4,
    Infeasible = 5,
    IoError = 6,
    CheckpointError = 7,
    InternalError = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> RvecStatus {
    match err {
        Error::InvalidSpec(_) | Error::InvalidInput(_) | Error::MissingEmbedding(_) => {
            RvecStatus::InvalidArgument
        }
        Error::Parse { .. } | Error::Json(_) => RvecStatus::ParseError,
        Error::Shape(_) => RvecStatus::ShapeMismatch,
        Error::Infeasible(_) => RvecStatus::Infeasible,
        Error::Io(_) => RvecStatus::IoError,
        Error::Checkpoint(_) => RvecStatus::CheckpointError,
    }
}

fn fail(err: &Error) -> RvecStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Run a fallible body, translating panics into `InternalError`.
fn guarded(body: impl FnOnce() -> RvecStatus) -> RvecStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            RvecStatus::InternalError
        }
    }
}

/// # Safety
/// `ptr` must be non-null and point to a NUL-terminated UTF-8 string.
unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, RvecStatus> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(RvecStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        RvecStatus::InvalidArgument
    })
}

/// Message of the most recent error on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn rvec_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version string (static storage).
#[no_mangle]
pub extern "C" fn rvec_version() -> *const c_char {
    static VERSION: &[u8] = b"0.1.0\0";
    VERSION.as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Corpus handle
// ---------------------------------------------------------------------------

/// Opaque corpus handle.
pub struct RvecCorpus(Corpus);

/// Load a JSON-lines corpus file. Returns null on failure (see
/// `rvec_last_error`).
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rvec_corpus_load(path: *const c_char) -> *mut RvecCorpus {
    let mut out: *mut RvecCorpus = std::ptr::null_mut();
    guarded(|| {
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match rhythmvec::corpus::load_corpus(Path::new(path)) {
            Ok(corpus) => {
                out = Box::into_raw(Box::new(RvecCorpus(corpus)));
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    });
    out
}

/// Parse a corpus from an in-memory JSON-lines buffer.
///
/// # Safety
/// `bytes` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn rvec_corpus_parse(bytes: *const u8, len: usize) -> *mut RvecCorpus {
    let mut out: *mut RvecCorpus = std::ptr::null_mut();
    guarded(|| {
        if bytes.is_null() {
            set_error("null buffer");
            return RvecStatus::NullPointer;
        }
        let slice = std::slice::from_raw_parts(bytes, len);
        match corpus_from_jsonl(slice) {
            Ok(corpus) => {
                out = Box::into_raw(Box::new(RvecCorpus(corpus)));
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    });
    out
}

/// Generate a synthetic corpus from a generator spec (JSON, SynthSpec
/// schema). Returns null on failure.
///
/// # Safety
/// `spec_json` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rvec_corpus_generate(spec_json: *const c_char) -> *mut RvecCorpus {
    let mut out: *mut RvecCorpus = std::ptr::null_mut();
    guarded(|| {
        let text = match cstr(spec_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let spec: SynthSpec = match serde_json_from(text) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match generate_synthetic_corpus(&spec) {
            Ok(corpus) => {
                out = Box::into_raw(Box::new(RvecCorpus(corpus)));
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    });
    out
}

fn serde_json_from<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, RvecStatus> {
    serde_json::from_str(text).map_err(|e| {
        set_error(&format!("json error: {e}"));
        RvecStatus::ParseError
    })
}

/// Write a corpus in canonical JSON-lines form.
///
/// # Safety
/// `corpus` must be a live handle from this library; `path` a NUL-terminated
/// UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rvec_corpus_save(
    corpus: *const RvecCorpus,
    path: *const c_char,
) -> RvecStatus {
    guarded(|| {
        let Some(corpus) = corpus.as_ref() else {
            set_error("null corpus handle");
            return RvecStatus::NullPointer;
        };
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match corpus_to_jsonl(&corpus.0)
            .and_then(|bytes| std::fs::write(path, bytes).map_err(Error::from))
        {
            Ok(()) => RvecStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Number of utterances.
///
/// # Safety
/// `corpus` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rvec_corpus_num_utterances(corpus: *const RvecCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Number of distinct speakers.
///
/// # Safety
/// `corpus` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rvec_corpus_num_speakers(corpus: *const RvecCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.speakers().len())
}

/// Free a corpus handle (null is allowed).
///
/// # Safety
/// `corpus` must be null or a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rvec_corpus_free(corpus: *mut RvecCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

// ---------------------------------------------------------------------------
// Speaker model handle
// ---------------------------------------------------------------------------

/// Opaque speaker-model handle.
pub struct RvecSpeakerModel(SpeakerModel);

/// Load a speaker checkpoint (RVEC1 container). Returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rvec_speaker_model_load(path: *const c_char) -> *mut RvecSpeakerModel {
    let mut out: *mut RvecSpeakerModel = std::ptr::null_mut();
    guarded(|| {
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let loaded = ModelCheckpoint::load(Path::new(path))
            .and_then(|ck| SpeakerModel::from_checkpoint(&ck));
        match loaded {
            Ok(model) => {
                out = Box::into_raw(Box::new(RvecSpeakerModel(model)));
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    });
    out
}

/// Embedding width of a loaded speaker model (0 for null).
///
/// # Safety
/// `model` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rvec_speaker_embed_dim(model: *const RvecSpeakerModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().embed_dim)
}

/// Phoneme inventory size K of a loaded speaker model (0 for null).
///
/// # Safety
/// `model` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rvec_speaker_inventory_size(model: *const RvecSpeakerModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.inventory().k())
}

/// Extract the rhythm embedding of one utterance.
///
/// `phoneme_ids` are indices into the model's inventory; `durations_s` are
/// per-phoneme durations in seconds. `out` must hold `rvec_speaker_embed_dim`
/// doubles.
///
/// # Safety
/// `model` must be a live handle; the arrays must match the documented
/// lengths and be readable/writable.
#[no_mangle]
pub unsafe extern "C" fn rvec_speaker_embed(
    model: *const RvecSpeakerModel,
    phoneme_ids: *const u32,
    durations_s: *const f64,
    len: usize,
    out: *mut f64,
) -> RvecStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            set_error("null model handle");
            return RvecStatus::NullPointer;
        };
        if phoneme_ids.is_null() || durations_s.is_null() || out.is_null() {
            set_error("null array pointer");
            return RvecStatus::NullPointer;
        }
        let ids = std::slice::from_raw_parts(phoneme_ids, len);
        let durations = std::slice::from_raw_parts(durations_s, len).to_vec();
        let phonemes: Vec<usize> = ids.iter().map(|&p| p as usize).collect();
        let utterance = match Utterance::new(
            String::new(),
            String::new(),
            phonemes,
            durations,
            model.0.inventory().k(),
        ) {
            Ok(u) => u,
            Err(e) => return fail(&e),
        };
        match model.0.extract_embedding(&utterance, model.0.inventory()) {
            Ok(embedding) => {
                std::ptr::copy_nonoverlapping(
                    embedding.values().as_ptr(),
                    out,
                    embedding.dim(),
                );
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Free a speaker-model handle (null is allowed).
///
/// # Safety
/// `model` must be null or a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rvec_speaker_model_free(model: *mut RvecSpeakerModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// Duration model handle
// ---------------------------------------------------------------------------

/// Opaque duration-model handle.
pub struct RvecDurationModel(DurationModel);

/// Load a duration checkpoint (RVEC1 container). Returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn rvec_duration_model_load(path: *const c_char) -> *mut RvecDurationModel {
    let mut out: *mut RvecDurationModel = std::ptr::null_mut();
    guarded(|| {
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let loaded = ModelCheckpoint::load(Path::new(path))
            .and_then(|ck| DurationModel::from_checkpoint(&ck));
        match loaded {
            Ok(model) => {
                out = Box::into_raw(Box::new(RvecDurationModel(model)));
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    });
    out
}

/// Speaker-embedding width the duration model expects (0 for null).
///
/// # Safety
/// `model` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rvec_duration_embed_dim(model: *const RvecDurationModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().embed_dim)
}

/// Predict per-phoneme durations (seconds, >= 0.001) for a phoneme sequence
/// under a speaker embedding. `out` must hold `len` doubles.
///
/// # Safety
/// `model` must be a live handle; array arguments must match the documented
/// lengths and be readable/writable.
#[no_mangle]
pub unsafe extern "C" fn rvec_duration_predict(
    model: *const RvecDurationModel,
    phoneme_ids: *const u32,
    len: usize,
    embedding: *const f64,
    embedding_dim: usize,
    out: *mut f64,
) -> RvecStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            set_error("null model handle");
            return RvecStatus::NullPointer;
        };
        if phoneme_ids.is_null() || embedding.is_null() || out.is_null() {
            set_error("null array pointer");
            return RvecStatus::NullPointer;
        }
        let ids = std::slice::from_raw_parts(phoneme_ids, len);
        let phonemes: Vec<usize> = ids.iter().map(|&p| p as usize).collect();
        let emb = Embedding(std::slice::from_raw_parts(embedding, embedding_dim).to_vec());
        match model.0.predict_durations(&phonemes, &emb) {
            Ok(durations) => {
                std::ptr::copy_nonoverlapping(durations.as_ptr(), out, durations.len());
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Free a duration-model handle (null is allowed).
///
/// # Safety
/// `model` must be null or a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rvec_duration_model_free(model: *mut RvecDurationModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Cosine similarity of two `len`-dimensional vectors.
///
/// # Safety
/// `a`, `b`, and `out` must be readable/writable for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn rvec_cosine_similarity(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> RvecStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            set_error("null array pointer");
            return RvecStatus::NullPointer;
        }
        let va = std::slice::from_raw_parts(a, len);
        let vb = std::slice::from_raw_parts(b, len);
        match metrics::cosine_similarity(va, vb) {
            Ok(v) => {
                *out = v;
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Equal error rate of verification scores. `labels[i]` is nonzero for
/// same-speaker trials. `out_threshold` may be null.
///
/// # Safety
/// `scores` and `labels` must hold `len` readable elements; out pointers,
/// when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn rvec_eer(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out_eer: *mut f64,
    out_threshold: *mut f64,
) -> RvecStatus {
    guarded(|| {
        if scores.is_null() || labels.is_null() || out_eer.is_null() {
            set_error("null array pointer");
            return RvecStatus::NullPointer;
        }
        let scores = std::slice::from_raw_parts(scores, len);
        let labels = std::slice::from_raw_parts(labels, len);
        let mut targets = Vec::new();
        let mut impostors = Vec::new();
        for (&s, &l) in scores.iter().zip(labels) {
            if l != 0 {
                targets.push(s);
            } else {
                impostors.push(s);
            }
        }
        match metrics::eer_from_scores(&targets, &impostors) {
            Ok(result) => {
                *out_eer = result.eer;
                if !out_threshold.is_null() {
                    *out_threshold = result.threshold;
                }
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Pearson correlation of paired samples.
///
/// # Safety
/// `xs`, `ys`, and `out` must be readable/writable for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn rvec_pearson(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out: *mut f64,
) -> RvecStatus {
    guarded(|| {
        if xs.is_null() || ys.is_null() || out.is_null() {
            set_error("null array pointer");
            return RvecStatus::NullPointer;
        }
        let vx = std::slice::from_raw_parts(xs, len);
        let vy = std::slice::from_raw_parts(ys, len);
        match metrics::pearson(vx, vy) {
            Ok(v) => {
                *out = v;
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Maximal information coefficient of paired samples (len >= 10).
///
/// # Safety
/// `xs`, `ys`, and `out` must be readable/writable for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn rvec_mic(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out: *mut f64,
) -> RvecStatus {
    guarded(|| {
        if xs.is_null() || ys.is_null() || out.is_null() {
            set_error("null array pointer");
            return RvecStatus::NullPointer;
        }
        let vx = std::slice::from_raw_parts(xs, len);
        let vy = std::slice::from_raw_parts(ys, len);
        match metrics::mic(vx, vy) {
            Ok(v) => {
                *out = v;
                RvecStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Speaking rate (phonemes/sec) of a duration sequence in seconds.
///
/// # Safety
/// `durations_s` must hold `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rvec_speaking_rate(
    durations_s: *const f64,
    len: usize,
    out: *mut f64,
) -> RvecStatus {
    guarded(|| {
        if durations_s.is_null() || out.is_null() {
            set_error("null array pointer");
            return RvecStatus::NullPointer;
        }
        let d = std::slice::from_raw_parts(durations_s, len);
        if len == 0 {
            set_error("empty duration sequence");
            return RvecStatus::InvalidArgument;
        }
        let total: f64 = d.iter().sum();
        if total.is_nan() || total <= 0.0 {
            set_error("total duration must be positive");
            return RvecStatus::InvalidArgument;
        }
        *out = len as f64 / total;
        RvecStatus::Ok
    })
}
