//! C ABI over `hybridscore`: load checkpoints, score embeddings, compute AUC and read or
//! write embedding files.
//!
//! Every fallible function returns an [`HdStatus`]; on failure the message is available
//! from [`hd_last_error_message`] on the same thread. Objects are opaque handles owned by
//! the caller and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use hybridscore::embedding::{read_embeddings, write_embeddings, EmbeddingMatrix};
use hybridscore::scorer::{anomaly_score, ScorerConfig};
use hybridscore::trainer::{forward, read_checkpoint, Checkpoint};
use hybridscore::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    Numeric = 6,
    Internal = 7,
}

/// A trained classifier head loaded from a checkpoint file.
pub struct HdModel {
    ck: Checkpoint,
}

/// A dense `rows x dim` float32 embedding matrix.
pub struct HdEmbeddings {
    m: EmbeddingMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HdStatus {
    match e {
        Error::Invalid(_) => HdStatus::InvalidArgument,
        Error::Parse { .. } | Error::Format { .. } | Error::Json(_) => HdStatus::Format,
        Error::DimensionMismatch { .. } => HdStatus::DimensionMismatch,
        Error::Numeric(_) => HdStatus::Numeric,
        Error::Io { .. } => HdStatus::Io,
        Error::Extractor { .. } => HdStatus::Internal,
    }
}

struct Fail(HdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(HdStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal error: {msg}"));
            HdStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null if none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. On success `*out` receives a handle to free with [`hd_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hd_model_load(path: *const c_char, out: *mut *mut HdModel) -> HdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ck = read_checkpoint(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(HdModel { ck }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`hd_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hd_model_free(model: *mut HdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hd_model_num_classes(model: *const HdModel) -> usize {
    model.as_ref().map_or(0, |m| m.ck.params.num_classes())
}

/// Expected embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hd_model_input_dim(model: *const HdModel) -> usize {
    model.as_ref().map_or(0, |m| m.ck.params.input_dim())
}

/// Class probabilities for one embedding `x[0..dim]` into `probs[0..k]`.
///
/// # Safety
/// `x` must point to `dim` floats and `probs` to `k` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_model_predict_proba(
    model: *const HdModel,
    x: *const f32,
    dim: usize,
    probs: *mut f64,
    k: usize,
) -> HdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = slice_arg(x, dim, "x")?;
        let kk = m.ck.params.num_classes();
        if k != kk {
            return Err(Error::DimensionMismatch { expected: kk, got: k }.into());
        }
        let out = slice_out(probs, k, "probs")?;
        let xs: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let (_, p) = forward(&m.ck.params, &xs)?;
        out.copy_from_slice(&p);
        Ok(())
    })
}

/// Anomaly scores for `n` row-major embeddings of width `dim` into `scores[0..n]`.
///
/// # Safety
/// `rows` must point to `n * dim` floats and `scores` to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_model_score(
    model: *const HdModel,
    rows: *const f32,
    n: usize,
    dim: usize,
    threshold: f64,
    scores: *mut f64,
) -> HdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let cfg = ScorerConfig::new(threshold)?;
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let data = slice_arg(rows, len, "rows")?;
        let out = slice_out(scores, n, "scores")?;
        for (i, s) in out.iter_mut().enumerate() {
            let x: Vec<f64> = data[i * dim..(i + 1) * dim].iter().map(|&v| f64::from(v)).collect();
            let (_, p) = forward(&m.ck.params, &x)?;
            *s = anomaly_score(&p, &cfg);
        }
        Ok(())
    })
}

/// Probability-filtering score of one probability vector.
///
/// # Safety
/// `probs` must point to `k` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hd_anomaly_score(probs: *const f64, k: usize, threshold: f64, out: *mut f64) -> HdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = ScorerConfig::new(threshold)?;
        let p = slice_arg(probs, k, "probs")?;
        if k < 2 {
            return Err(invalid(format!("need at least 2 probabilities, got {k}")));
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("probabilities must be in [0, 1]"));
        }
        *out = anomaly_score(p, &cfg);
        Ok(())
    })
}

/// Tie-aware ROC AUC of `scores` against `is_hybrid` (nonzero = hybrid).
///
/// # Safety
/// `scores` and `is_hybrid` must each point to `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hd_roc_auc(scores: *const f64, is_hybrid: *const u8, n: usize, out: *mut f64) -> HdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = slice_arg(scores, n, "scores")?;
        let h = slice_arg(is_hybrid, n, "is_hybrid")?;
        let pairs: Vec<(f64, bool)> = s.iter().zip(h).map(|(&s, &h)| (s, h != 0)).collect();
        *out = hybridscore::metrics::auc_from_pairs(&pairs)?;
        Ok(())
    })
}

/// Copies `n * dim` row-major floats into a new embedding handle.
///
/// # Safety
/// `data` must point to `n * dim` floats and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hd_embeddings_new(data: *const f32, n: usize, dim: usize, out: *mut *mut HdEmbeddings) -> HdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let values = slice_arg(data, len, "data")?.to_vec();
        let m = EmbeddingMatrix::new(n, dim, values)?;
        *out = Box::into_raw(Box::new(HdEmbeddings { m }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hd_embeddings_read(path: *const c_char, out: *mut *mut HdEmbeddings) -> HdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = read_embeddings(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(HdEmbeddings { m }));
        Ok(())
    })
}

/// # Safety
/// `emb` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hd_embeddings_write(emb: *const HdEmbeddings, path: *const c_char) -> HdStatus {
    guard(|| {
        let e = emb.as_ref().ok_or_else(|| null("embeddings"))?;
        write_embeddings(&e.m, &path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `emb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hd_embeddings_rows(emb: *const HdEmbeddings) -> usize {
    emb.as_ref().map_or(0, |e| e.m.rows())
}

/// # Safety
/// `emb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hd_embeddings_dim(emb: *const HdEmbeddings) -> usize {
    emb.as_ref().map_or(0, |e| e.m.dim())
}

/// Borrowed pointer to the `rows * dim` values, valid until the handle is freed.
///
/// # Safety
/// `emb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hd_embeddings_data(emb: *const HdEmbeddings) -> *const f32 {
    emb.as_ref().map_or(ptr::null(), |e| e.m.data().as_ptr())
}

/// # Safety
/// `emb` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hd_embeddings_free(emb: *mut HdEmbeddings) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}
