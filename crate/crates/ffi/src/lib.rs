//! C ABI for loading a trained classifier and scoring headlines.
//!
//! Every function returns a [`CglStatus`]; on failure the message is
//! available from [`cgl_last_error`] on the same thread. Handles are opaque
//! and must be released with [`cgl_classifier_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cgl_mha::data::Vocabulary;
use cgl_mha::model::{predict, Model};
use cgl_mha::train::{load_trained, macro_f1, Confusion};
use cgl_mha::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CglStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Checkpoint = 5,
    Io = 6,
    Numeric = 7,
    Shape = 8,
    /// The text has no tokens after normalization.
    Unclassifiable = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// A loaded model and its vocabulary.
pub struct CglClassifier {
    model: Model<f32>,
    vocab: Vocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> CglStatus {
    match err {
        Error::Config(_) => CglStatus::Config,
        Error::Contract(_) | Error::Parse { .. } | Error::Data(_) => CglStatus::Data,
        Error::Checkpoint(_) => CglStatus::Checkpoint,
        Error::Io { .. } => CglStatus::Io,
        Error::Numeric(_) => CglStatus::Numeric,
        Error::Shape(_) | Error::Index(_) => CglStatus::Shape,
    }
}

/// Runs `body`, recording any error or panic message.
fn guard(body: impl FnOnce() -> Result<(), (CglStatus, String)>) -> CglStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            CglStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CglStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CglStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (CglStatus, String)> {
    if ptr.is_null() {
        return Err((CglStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (CglStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Loads a checkpoint and the vocabulary written with it. `vocab` may be
/// null, in which case `vocab.txt` next to the checkpoint is used. On
/// success `*out` receives a new handle.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cgl_classifier_load(
    checkpoint: *const c_char,
    vocab: *const c_char,
    out: *mut *mut CglClassifier,
) -> CglStatus {
    guard(|| {
        if out.is_null() {
            return Err((CglStatus::NullArgument, "out is null".into()));
        }
        *out = std::ptr::null_mut();
        let ckpt = PathBuf::from(c_str(checkpoint, "checkpoint")?);
        let vocab_path = if vocab.is_null() {
            ckpt.with_file_name("vocab.txt")
        } else {
            PathBuf::from(c_str(vocab, "vocab")?)
        };
        let (model, vocab) = load_trained(&ckpt, &vocab_path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CglClassifier { model, vocab }));
        Ok(())
    })
}

/// Number of output classes (the length `probs` must have).
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cgl_classifier_num_classes(handle: *const CglClassifier) -> usize {
    handle.as_ref().map_or(0, |h| h.model.config.num_classes)
}

/// Classifies one headline. Writes the predicted class to `*label`
/// (1 = sarcastic) and the class probabilities to `probs[0..probs_len]`.
/// `probs` may be null when `probs_len` is 0.
///
/// # Safety
/// `handle` must be a live handle, `text` NUL-terminated, `label`
/// writable, and `probs` valid for `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cgl_classifier_predict(
    handle: *const CglClassifier,
    text: *const c_char,
    label: *mut u32,
    probs: *mut f64,
    probs_len: usize,
) -> CglStatus {
    guard(|| {
        let h = handle
            .as_ref()
            .ok_or((CglStatus::NullArgument, "handle is null".to_string()))?;
        if label.is_null() || (probs.is_null() && probs_len > 0) {
            return Err((CglStatus::NullArgument, "output pointer is null".into()));
        }
        let text = c_str(text, "text")?;
        let classes = h.model.config.num_classes;
        if probs_len != 0 && probs_len < classes {
            return Err((
                CglStatus::BufferTooSmall,
                format!("probs holds {probs_len} values, model has {classes} classes"),
            ));
        }
        let mut results = predict(&h.model, &h.vocab, &[text]).map_err(lib_err)?;
        let p = results
            .pop()
            .expect("one result per text")
            .map_err(|u| (CglStatus::Unclassifiable, format!("no tokens after normalization: {:?}", u.text)))?;
        *label = p.label as u32;
        if probs_len > 0 {
            std::slice::from_raw_parts_mut(probs, classes).copy_from_slice(&p.probabilities);
        }
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cgl_classifier_free(handle: *mut CglClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Macro-averaged F1 of a binary confusion matrix (class 1 positive).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cgl_macro_f1(
    true_pos: u64,
    false_pos: u64,
    false_neg: u64,
    true_neg: u64,
    out: *mut f64,
) -> CglStatus {
    guard(|| {
        if out.is_null() {
            return Err((CglStatus::NullArgument, "out is null".into()));
        }
        let c = Confusion::from_binary(true_pos as usize, false_pos as usize, false_neg as usize, true_neg as usize);
        *out = macro_f1(&c).map_err(lib_err)?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or "" after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cgl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn cgl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
