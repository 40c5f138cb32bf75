//! C ABI over the noise model, corpus files, authenticator checkpoints and
//! the paired t-test.
//!
//! Every function returns an [`MgStatus`]; results go through out-pointers.
//! Objects are opaque handles freed with their `*_free` function. Panics are
//! caught at the boundary and reported as [`MgStatus::Panic`]. The message of
//! the last failure on the calling thread is available from
//! [`mg_last_error_message`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use mousegate::authenticator::{load_checkpoint, AuthenticatorModel, DecisionThreshold};
use mousegate::data_synth::{load_corpus, Corpus, Movement};
use mousegate::nn::Tensor;
use mousegate::physical_noise::{mean_distance_coefficient, NoiseModel};
use mousegate::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    MissingCheckpoint = 6,
    Degenerate = 7,
    OutOfRange = 8,
    Internal = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|c| *c.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> MgStatus {
    match e {
        Error::InvalidInput(_) | Error::InvalidCapture(_) | Error::DegeneratePattern(..) | Error::Config { .. } => {
            MgStatus::InvalidInput
        }
        Error::ShapeMismatch { .. } => MgStatus::ShapeMismatch,
        Error::Io { .. } => MgStatus::Io,
        Error::Parse { .. } | Error::Json(_) => MgStatus::Parse,
        Error::MissingCheckpoint(_) => MgStatus::MissingCheckpoint,
        Error::Degenerate(_) | Error::SingleClass | Error::Empty(_) => MgStatus::Degenerate,
        Error::Job { source, .. } => status_of(source),
        _ => MgStatus::Internal,
    }
}

enum Failure {
    Status(MgStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn fail(status: MgStatus, msg: impl Into<String>) -> Failure {
    Failure::Status(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MgStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(MgStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    nonnull(p, name)?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| fail(MgStatus::InvalidInput, format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    nonnull(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). `*written` receives the full message length.
#[no_mangle]
pub unsafe extern "C" fn mg_last_error_message(buf: *mut c_char, len: usize, written: *mut usize) -> MgStatus {
    guard(|| {
        let msg = LAST_ERROR.with(|c| c.borrow().clone());
        if !written.is_null() {
            *written = msg.len();
        }
        if buf.is_null() || len == 0 {
            return Ok(());
        }
        let n = msg.len().min(len - 1);
        ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
        Ok(())
    })
}

/// `c(L) = (0.8 / L) Σ √i`, the mean tracking-distance coefficient.
#[no_mangle]
pub unsafe extern "C" fn mg_mean_distance_coefficient(movement_length: usize, out: *mut f64) -> MgStatus {
    guard(|| {
        nonnull(out, "out")?;
        if movement_length == 0 {
            return Err(fail(MgStatus::InvalidInput, "movement length must be >= 1"));
        }
        *out = mean_distance_coefficient(movement_length);
        Ok(())
    })
}

/// Replication-noise σ for a movement given as separate `vx`, `vy` arrays.
#[no_mangle]
pub unsafe extern "C" fn mg_sigma_for_movement(vx: *const f64, vy: *const f64, len: usize, out: *mut f64) -> MgStatus {
    guard(|| {
        nonnull(out, "out")?;
        let (x, y) = (slice_arg(vx, len, "vx")?, slice_arg(vy, len, "vy")?);
        let m = Movement::new(x.iter().zip(y).map(|(a, b)| [*a, *b]).collect());
        *out = NoiseModel::new(len.max(1)).sigma_for(&m)?;
        Ok(())
    })
}

/// One-tailed paired t-test of `mean(a − b) > 0`.
#[no_mangle]
pub unsafe extern "C" fn mg_paired_t_test(a: *const f64, b: *const f64, n: usize, t_out: *mut f64, p_out: *mut f64) -> MgStatus {
    guard(|| {
        nonnull(t_out, "t_out")?;
        nonnull(p_out, "p_out")?;
        let r = mousegate::evalkit::paired_t_test_one_tailed(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        *t_out = r.t;
        *p_out = r.p;
        Ok(())
    })
}

/// Opaque corpus handle.
pub struct MgCorpus {
    corpus: Corpus,
}

#[no_mangle]
pub unsafe extern "C" fn mg_corpus_load(path: *const c_char, out: *mut *mut MgCorpus) -> MgStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let corpus = load_corpus(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(MgCorpus { corpus }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_corpus_len(handle: *const MgCorpus, out: *mut usize) -> MgStatus {
    guard(|| {
        nonnull(handle, "handle")?;
        nonnull(out, "out")?;
        *out = (*handle).corpus.trials.len();
        Ok(())
    })
}

/// Feature length of every trial: `2 · N_mov · L`.
#[no_mangle]
pub unsafe extern "C" fn mg_corpus_feature_len(handle: *const MgCorpus, out: *mut usize) -> MgStatus {
    guard(|| {
        nonnull(handle, "handle")?;
        nonnull(out, "out")?;
        *out = (*handle).corpus.pattern().feature_len();
        Ok(())
    })
}

/// Copies trial `index` as channel-major features into `buf` and writes its
/// subject id.
#[no_mangle]
pub unsafe extern "C" fn mg_corpus_trial(
    handle: *const MgCorpus,
    index: usize,
    buf: *mut f64,
    len: usize,
    subject_id: *mut u32,
) -> MgStatus {
    guard(|| {
        nonnull(handle, "handle")?;
        nonnull(buf, "buf")?;
        let c = &(*handle).corpus;
        let t = c.trials.get(index).ok_or_else(|| fail(MgStatus::OutOfRange, format!("trial {index} out of range")))?;
        let f = t.features();
        if len != f.len() {
            return Err(fail(MgStatus::ShapeMismatch, format!("buffer holds {len}, trial has {}", f.len())));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&f);
        if !subject_id.is_null() {
            *subject_id = t.subject_id;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_corpus_free(handle: *mut MgCorpus) {
    if !handle.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(handle))));
    }
}

/// Opaque authenticator handle with its calibrated threshold.
pub struct MgAuthenticator {
    model: AuthenticatorModel,
    threshold: DecisionThreshold,
}

/// Loads `<dir>/<stem>.bin` and `<dir>/<stem>.json`.
#[no_mangle]
pub unsafe extern "C" fn mg_authenticator_load(dir: *const c_char, stem: *const c_char, out: *mut *mut MgAuthenticator) -> MgStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        let stem = path_arg(stem, "stem")?;
        let (model, manifest) = load_checkpoint(Path::new(&dir), &stem.to_string_lossy())?;
        *out = Box::into_raw(Box::new(MgAuthenticator { model, threshold: manifest.threshold }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_authenticator_feature_len(handle: *const MgAuthenticator, out: *mut usize) -> MgStatus {
    guard(|| {
        nonnull(handle, "handle")?;
        nonnull(out, "out")?;
        *out = (*handle).model.feature_len();
        Ok(())
    })
}

/// Valid-user probability of `rows` feature rows laid out back to back;
/// `accepted` (optional) receives 1 where the threshold accepts.
#[no_mangle]
pub unsafe extern "C" fn mg_authenticator_score(
    handle: *const MgAuthenticator,
    features: *const f64,
    rows: usize,
    scores: *mut f64,
    accepted: *mut u8,
) -> MgStatus {
    guard(|| {
        nonnull(handle, "handle")?;
        nonnull(scores, "scores")?;
        let h = &*handle;
        let cols = h.model.feature_len();
        if rows == 0 {
            return Err(fail(MgStatus::InvalidInput, "rows must be >= 1"));
        }
        let x = slice_arg(features, rows * cols, "features")?;
        let s = h.model.valid_scores(&Tensor::new(vec![rows, cols], x.to_vec()))?;
        std::slice::from_raw_parts_mut(scores, rows).copy_from_slice(&s);
        if !accepted.is_null() {
            let acc = std::slice::from_raw_parts_mut(accepted, rows);
            for (a, v) in acc.iter_mut().zip(&s) {
                *a = u8::from(h.threshold.accepts(*v));
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mg_authenticator_free(handle: *mut MgAuthenticator) {
    if !handle.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(handle))));
    }
}
