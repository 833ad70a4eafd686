//! C ABI over `tep-core`.
//!
//! Every function returns a [`TepStatus`]; on failure the message is
//! available from [`tep_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. No function
//! unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tep_core::error::Error;
use tep_core::evaluation::predict;
use tep_core::model::Checkpoint;
use tep_core::ontology::Ontology;
use tep_core::textizer::{encode_texts, Vocab};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TepStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Config = 5,
    Io = 6,
    Numerical = 7,
    Panic = 8,
}

/// A parsed, validated ontology.
pub struct TepOntology {
    inner: Ontology,
}

/// A checkpoint with its vocabulary, ready for inference.
pub struct TepModel {
    checkpoint: Checkpoint,
    vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> TepStatus {
    match e {
        Error::Parse { .. } => TepStatus::Parse,
        Error::Validation(_) => TepStatus::Validation,
        Error::Config(_) => TepStatus::Config,
        Error::Io { .. } => TepStatus::Io,
        Error::Numerical(_) => TepStatus::Numerical,
    }
}

struct Fail(TepStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TepStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TepStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TepStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(TepStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TepStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(TepStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(TepStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes a new handle for the bundled seed ontology to `*out`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tep_ontology_seed(out: *mut *mut TepOntology) -> TepStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(TepOntology {
            inner: Ontology::seed(),
        }));
        Ok(())
    })
}

/// Loads and validates an ontology file.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tep_ontology_load(
    path: *const c_char,
    out: *mut *mut TepOntology,
) -> TepStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let inner = Ontology::load(PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(TepOntology { inner }));
        Ok(())
    })
}

/// Number of conditions in the ontology.
///
/// # Safety
/// `ont` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tep_ontology_condition_count(
    ont: *const TepOntology,
    out: *mut usize,
) -> TepStatus {
    guard(|| {
        let ont = handle(ont, "ontology")?;
        *out_arg(out, "out")? = ont.inner.conditions.len();
        Ok(())
    })
}

/// # Safety
/// `ont` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tep_ontology_free(ont: *mut TepOntology) {
    if !ont.is_null() {
        drop(Box::from_raw(ont));
    }
}

/// Loads a checkpoint and its vocabulary file.
///
/// # Safety
/// Paths must be null or NUL-terminated strings; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tep_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut TepModel,
) -> TepStatus {
    guard(|| {
        let ck = str_arg(checkpoint_path, "checkpoint_path")?;
        let vp = str_arg(vocab_path, "vocab_path")?;
        let out = out_arg(out, "out")?;
        let checkpoint = Checkpoint::load(PathBuf::from(ck))?;
        let vocab = Vocab::load(PathBuf::from(vp))?;
        if vocab.size() != checkpoint.config.vocab_size {
            return Err(Fail(
                TepStatus::Validation,
                format!(
                    "vocabulary has {} entries but the checkpoint expects {}",
                    vocab.size(),
                    checkpoint.config.vocab_size
                ),
            ));
        }
        *out = Box::into_raw(Box::new(TepModel { checkpoint, vocab }));
        Ok(())
    })
}

/// Vocabulary size the model was trained with.
///
/// # Safety
/// `model` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tep_model_vocab_size(
    model: *const TepModel,
    out: *mut usize,
) -> TepStatus {
    guard(|| {
        let m = handle(model, "model")?;
        *out_arg(out, "out")? = m.vocab.size();
        Ok(())
    })
}

/// Classifies a rendered window pair. Writes the probabilities of
/// entail, contradict and neutral (in that order) to `probs[0..3]`.
///
/// # Safety
/// `model` must be null or a live handle; texts null or NUL-terminated;
/// `probs` null or valid for three `float` writes.
#[no_mangle]
pub unsafe extern "C" fn tep_model_classify(
    model: *const TepModel,
    earlier: *const c_char,
    later: *const c_char,
    gap_days: f64,
    probs: *mut f32,
) -> TepStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let a = str_arg(earlier, "earlier")?;
        let b = str_arg(later, "later")?;
        if probs.is_null() {
            return Err(Fail(TepStatus::NullPointer, "probs is null".into()));
        }
        if !gap_days.is_finite() || gap_days < 0.0 {
            return Err(Fail(
                TepStatus::Validation,
                format!("gap_days {gap_days} must be finite and >= 0"),
            ));
        }
        let cfg = &m.checkpoint.config;
        let seq = encode_texts(a, b, gap_days, &m.vocab, cfg.max_len)?;
        let p = predict(&m.checkpoint.params, cfg, &[seq], 1)?;
        let out = std::slice::from_raw_parts_mut(probs, 3);
        for (o, v) in out.iter_mut().zip(p.probs[0]) {
            *o = v as f32;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tep_model_free(model: *mut TepModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
