//! C ABI over `cybershield`: load a classifier and a detector, classify a
//! window, sign it and score the signature.
//!
//! Every function returns a [`CsStatus`]. On failure the message is kept per
//! thread and can be copied out with [`cs_last_error`]. Handles are opaque
//! and must be released with their `_free` function; passing NULL to a
//! `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cybershield::classifiers::{ClassifierModel, TapeModel};
use cybershield::data::{Severity, TimeSeriesWindow};
use cybershield::detector::{verdict_for, AttackDetectorModel};
use cybershield::explain::{signature, BackgroundSet, SignatureMode};
use cybershield::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Shapes or fingerprints do not fit together.
    Contract = 3,
    Io = 4,
    /// Malformed or incompatible file.
    Format = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Signature layout, mirrors the library's signature modes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsSignatureMode {
    AllClasses = 0,
    PredictedClass = 1,
}

/// Trained severity classifier.
pub struct CsModel {
    inner: ClassifierModel,
}

/// Trained attack detector.
pub struct CsDetector {
    inner: AttackDetectorModel,
}

/// Benign background bound to one classifier.
pub struct CsBackground {
    inner: BackgroundSet,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::Io(_) | Error::MissingArtifact { .. } => CsStatus::Io,
        Error::Load(_) | Error::Json(_) | Error::Csv(_) | Error::Schema(_) | Error::Parse { .. } => CsStatus::Format,
        Error::Numeric { .. } | Error::Divergence { .. } | Error::Undefined(_) => CsStatus::Numeric,
        Error::Config(_) => CsStatus::InvalidArgument,
        _ => CsStatus::Contract,
    }
}

struct Fail(CsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CsStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, recording the error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CsStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CsStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn window_of(model: &ClassifierModel, values: &[f32]) -> Result<TimeSeriesWindow, Fail> {
    let (t, n) = model.input_shape();
    if values.len() != t * n {
        return Err(Fail(CsStatus::Contract, format!("window has {} values, model expects {t}x{n}", values.len())));
    }
    Ok(TimeSeriesWindow {
        timestep: t,
        n_features: n,
        values: values.to_vec(),
        label: Severity::None,
        source: "ffi".into(),
        end_frame: 0,
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_load(path: *const c_char, out: *mut *mut CsModel) -> CsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = ClassifierModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CsModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`cs_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_model_free(model: *mut CsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_shape(
    model: *const CsModel,
    timestep: *mut usize,
    n_features: *mut usize,
    n_classes: *mut usize,
) -> CsStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let (t, n) = m.input_shape();
        *out_arg(timestep, "timestep")? = t;
        *out_arg(n_features, "n_features")? = n;
        *out_arg(n_classes, "n_classes")? = m.n_classes();
        Ok(())
    })
}

/// Classifies one row-major `timestep × n_features` window of normalized
/// values. Writes `n_classes` probabilities and the predicted class index.
///
/// # Safety
/// `values` must hold `len` floats, `probs` `probs_len` doubles; `label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_predict(
    model: *const CsModel,
    values: *const f32,
    len: usize,
    probs: *mut f64,
    probs_len: usize,
    label: *mut u32,
) -> CsStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let w = window_of(m, slice_arg(values, len, "values")?)?;
        if probs.is_null() {
            return Err(null("probs"));
        }
        if probs_len < m.n_classes() {
            return Err(Fail(CsStatus::BufferTooSmall, format!("need {} probabilities", m.n_classes())));
        }
        let label = out_arg(label, "label")?;
        let p = m.predict(&w)?;
        std::slice::from_raw_parts_mut(probs, p.len()).copy_from_slice(&p);
        *label = m.predict_label(&w)?.index() as u32;
        Ok(())
    })
}

/// Builds a background from `n_windows` consecutive windows of normalized values.
///
/// # Safety
/// `windows` must hold `n_windows · timestep · n_features` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_background_new(
    model: *const CsModel,
    windows: *const f32,
    n_windows: usize,
    out: *mut *mut CsBackground,
) -> CsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        if n_windows == 0 {
            return Err(Fail(CsStatus::InvalidArgument, "background needs at least one window".into()));
        }
        let (t, n) = m.input_shape();
        let all = slice_arg(windows, n_windows * t * n, "windows")?;
        let ws = all.chunks(t * n).map(|c| window_of(m, c)).collect::<Result<Vec<_>, _>>()?;
        let inner = BackgroundSet::for_model(m, ws)?;
        *out = Box::into_raw(Box::new(CsBackground { inner }));
        Ok(())
    })
}

/// # Safety
/// `bg` must be NULL or a handle from [`cs_background_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_background_free(bg: *mut CsBackground) {
    if !bg.is_null() {
        drop(Box::from_raw(bg));
    }
}

/// Signature of one window. Writes up to `out_len` values and the signature
/// length to `written`; a too small buffer yields `BufferTooSmall` with
/// `written` set to the required length.
///
/// # Safety
/// Handles must be live; `values` must hold `len` floats, `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_signature(
    model: *const CsModel,
    bg: *const CsBackground,
    mode: CsSignatureMode,
    values: *const f32,
    len: usize,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> CsStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let b = &bg.as_ref().ok_or_else(|| null("background"))?.inner;
        let written = out_arg(written, "written")?;
        let w = window_of(m, slice_arg(values, len, "values")?)?;
        let mode = match mode {
            CsSignatureMode::AllClasses => SignatureMode::AllClasses,
            CsSignatureMode::PredictedClass => SignatureMode::PredictedClass,
        };
        let sig = signature(m, &w, b, mode)?;
        *written = sig.values.len();
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < sig.values.len() {
            return Err(Fail(CsStatus::BufferTooSmall, format!("signature has {} values", sig.values.len())));
        }
        std::slice::from_raw_parts_mut(out, sig.values.len()).copy_from_slice(&sig.values);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_detector_load(path: *const c_char, out: *mut *mut CsDetector) -> CsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = AttackDetectorModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(CsDetector { inner }));
        Ok(())
    })
}

/// # Safety
/// `det` must be NULL or a handle from [`cs_detector_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_detector_free(det: *mut CsDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Signature length the detector expects.
///
/// # Safety
/// `det` must be a live handle; `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_detector_dim(det: *const CsDetector, dim: *mut usize) -> CsStatus {
    guard(|| {
        let d = &det.as_ref().ok_or_else(|| null("detector"))?.inner;
        *out_arg(dim, "dim")? = d.dim();
        Ok(())
    })
}

/// Scores a signature; `attack` is set when the score exceeds the detector's threshold.
///
/// # Safety
/// `det` must be a live handle; `sig` must hold `len` doubles; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn cs_detector_score(
    det: *const CsDetector,
    sig: *const f64,
    len: usize,
    score: *mut f64,
    attack: *mut bool,
) -> CsStatus {
    guard(|| {
        let d = &det.as_ref().ok_or_else(|| null("detector"))?.inner;
        let s = d.score(slice_arg(sig, len, "sig")?)?;
        *out_arg(score, "score")? = s;
        *out_arg(attack, "attack")? = verdict_for(s, d.threshold());
        Ok(())
    })
}
