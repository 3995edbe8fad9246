//! C ABI over the `egail` library.
//!
//! Every fallible function returns an [`EgailStatus`]; on failure the message
//! is available from [`egail_last_error_message`] on the same thread until the
//! next failing call. Strings handed out by the library are owned by the
//! caller and released with [`egail_string_free`]. Panics never cross the
//! boundary: they are caught and reported as [`EgailStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use egail::cli::{load_checkpoint, ChatSession, CliError};
use egail::discriminator::g_regularizer;
use egail::eval::{bleu, perplexity};
use egail::gail::checkpoint_precision;
use egail::numcore::Precision;
use egail::textdata::tokenize;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgailStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// Unreadable, corrupt or incompatible files.
    Data = 4,
    /// Numerical or model failure during inference.
    Runtime = 5,
    Panic = 6,
}

/// A loaded checkpoint plus its conversation history.
pub struct EgailModel {
    session: Session,
}

enum Session {
    F32(ChatSession<f32>),
    F64(ChatSession<f64>),
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(EgailStatus, String);

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e {
            CliError::Usage(_) => EgailStatus::InvalidArgument,
            CliError::Data(_) => EgailStatus::Data,
            CliError::Training(_) => EgailStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EgailStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EgailStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EgailStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a nul-terminated string valid for reads.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(EgailStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EgailStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn null(name: &str) -> Failure {
    Failure(EgailStatus::NullPointer, format!("{name} is null"))
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(EgailStatus::Runtime, "text contains a nul byte".into()))
}

/// Loads a checkpoint for dialogue. Sampling is seeded by `seed` and scaled
/// by `temperature`, which must be positive. On success `*out` owns a model
/// that must be released with [`egail_model_free`].
///
/// # Safety
/// `path` is a nul-terminated string and `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn egail_model_load(
    path: *const c_char,
    temperature: f64,
    seed: u64,
    out: *mut *mut EgailModel,
) -> EgailStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = Path::new(str_arg(path, "path")?);
        let precision = checkpoint_precision(path)
            .map_err(|e| Failure(EgailStatus::Data, format!("{}: {e}", path.display())))?;
        let session = match precision {
            Precision::F32 => Session::F32(ChatSession::from_checkpoint(
                load_checkpoint(path)?,
                temperature,
                seed,
            )?),
            Precision::F64 => Session::F64(ChatSession::from_checkpoint(
                load_checkpoint(path)?,
                temperature,
                seed,
            )?),
        };
        *out = Box::into_raw(Box::new(EgailModel { session }));
        Ok(())
    })
}

/// Releases a model. Null is accepted.
///
/// # Safety
/// `model` is null or was returned by [`egail_model_load`] and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn egail_model_free(model: *mut EgailModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Samples a reply to `prompt` given the conversation so far. A non-empty
/// reply is appended to the history together with the prompt. `*out_text`
/// receives the reply (free it with [`egail_string_free`]); `out_score`, if
/// non-null, receives the discriminator probability that the exchange is
/// generated.
///
/// # Safety
/// `model` is a live model, `prompt` a nul-terminated string, `out_text`
/// valid for writes and `out_score` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn egail_model_respond(
    model: *mut EgailModel,
    prompt: *const c_char,
    out_text: *mut *mut c_char,
    out_score: *mut f64,
) -> EgailStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        if out_text.is_null() {
            return Err(null("out_text"));
        }
        *out_text = ptr::null_mut();
        let prompt = str_arg(prompt, "prompt")?;
        let turn = match &mut model.session {
            Session::F32(s) => s.respond(prompt)?,
            Session::F64(s) => s.respond(prompt)?,
        };
        *out_text = to_c(turn.text)?;
        if !out_score.is_null() {
            *out_score = turn.score;
        }
        Ok(())
    })
}

/// Clears the conversation history.
///
/// # Safety
/// `model` is null or a live model.
#[no_mangle]
pub unsafe extern "C" fn egail_model_reset(model: *mut EgailModel) -> EgailStatus {
    guard(|| {
        match &mut model.as_mut().ok_or_else(|| null("model"))?.session {
            Session::F32(s) => s.reset(),
            Session::F64(s) => s.reset(),
        }
        Ok(())
    })
}

/// Number of utterances in the history (two per completed exchange).
///
/// # Safety
/// `model` is a live model and `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn egail_model_history_len(
    model: *const EgailModel,
    out: *mut usize,
) -> EgailStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = match &model.session {
            Session::F32(s) => s.history().len(),
            Session::F64(s) => s.history().len(),
        };
        Ok(())
    })
}

/// Perplexity of a sequence of token probabilities in (0, 1].
///
/// # Safety
/// `probs` points to `len` readable doubles and `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn egail_perplexity(
    probs: *const f64,
    len: usize,
    out: *mut f64,
) -> EgailStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if probs.is_null() {
            return Err(null("probs"));
        }
        let probs = std::slice::from_raw_parts(probs, len);
        let p = perplexity(probs).map_err(|e| Failure(EgailStatus::InvalidArgument, e.to_string()))?;
        *out = p.value;
        Ok(())
    })
}

/// Corpus BLEU (0 to 100) of one candidate against one reference, both
/// tokenized the same way as training text.
///
/// # Safety
/// Both strings are nul-terminated and `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn egail_bleu(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> EgailStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let cand = tokenize(str_arg(candidate, "candidate")?);
        let refs = tokenize(str_arg(reference, "reference")?);
        *out = bleu(&[cand], &[refs]).map_err(|e| Failure(EgailStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// The discriminator regularizer at `x`; infinite for `x >= 0`.
#[no_mangle]
pub extern "C" fn egail_regularizer_g(x: f64) -> f64 {
    g_regularizer(x)
}

/// Releases a string returned by this library. Null is accepted.
///
/// # Safety
/// `s` is null or came from this library and was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn egail_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on this thread; do not free it.
#[no_mangle]
pub extern "C" fn egail_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
