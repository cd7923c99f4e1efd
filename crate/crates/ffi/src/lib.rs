//! C interface to the corgan library.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible function
//! returns a `CorganStatus`; on failure `corgan_last_error` describes the
//! most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corgan::checkpoint::ModelBundle;
use corgan::data::{self, DataMode, RecordMatrix};
use corgan::eval;
use corgan::privacy::{self, AttackSetup, ThresholdSpec};
use corgan::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorganStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    State = 5,
    Precondition = 6,
    Config = 7,
    Parse = 8,
    Checkpoint = 9,
    Diverged = 10,
    Io = 11,
    Panic = 12,
}

/// A record matrix (binary or continuous, optionally labelled).
pub struct CorganMatrix {
    inner: RecordMatrix,
}

/// A trained model checkpoint.
pub struct CorganModel {
    inner: ModelBundle,
}

/// Summary of a membership-inference attack at its best threshold.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorganAttackSummary {
    /// 0 when no threshold flagged any record.
    pub any_flagged: i32,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CorganStatus {
    match e {
        Error::Shape { .. } => CorganStatus::Shape,
        Error::Numeric { .. } => CorganStatus::Numeric,
        Error::State(_) => CorganStatus::State,
        Error::Precondition(_) => CorganStatus::Precondition,
        Error::Config(_) => CorganStatus::Config,
        Error::Parse { .. } => CorganStatus::Parse,
        Error::Checkpoint(_) => CorganStatus::Checkpoint,
        Error::Diverged { .. } => CorganStatus::Diverged,
        Error::Io { .. } => CorganStatus::Io,
    }
}

enum Failure {
    Lib(Error),
    Arg(CorganStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Arg(CorganStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CorganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CorganStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Arg(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            CorganStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Arg(CorganStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null("output pointer"))
}

/// Message for the most recent error on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn corgan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a `corgan-bin v1` file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn corgan_matrix_load_binary(path: *const c_char, out: *mut *mut CorganMatrix) -> CorganStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, CorganMatrix { inner: data::load_binary_matrix(p)? })
    })
}

/// Loads a continuous CSV whose last column is the label.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn corgan_matrix_load_csv(path: *const c_char, header: i32, out: *mut *mut CorganMatrix) -> CorganStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, CorganMatrix { inner: data::load_continuous_csv(p, header != 0)? })
    })
}

/// Builds a binary matrix from `rows * cols` row-major values.
///
/// # Safety
/// `values` must point to `rows * cols` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn corgan_matrix_new_binary(rows: usize, cols: usize, values: *const f64, out: *mut *mut CorganMatrix) -> CorganStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let len = rows.checked_mul(cols).ok_or_else(|| Failure::Arg(CorganStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let v = std::slice::from_raw_parts(values, len).to_vec();
        put(out, CorganMatrix { inner: RecordMatrix::new(rows, cols, DataMode::Binary, v)? })
    })
}

/// Writes a binary matrix as `corgan-bin v1`.
///
/// # Safety
/// `m` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn corgan_matrix_write_binary(m: *const CorganMatrix, path: *const c_char) -> CorganStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        Ok(data::write_binary_matrix(path_arg(path, "path")?, &m.inner)?)
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn corgan_matrix_rows(m: *const CorganMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// Number of columns, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn corgan_matrix_cols(m: *const CorganMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Copies the row-major values into `buf`, which must hold `len >= rows * cols` doubles.
///
/// # Safety
/// `m` must be a live handle and `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn corgan_matrix_copy_values(m: *const CorganMatrix, buf: *mut f64, len: usize) -> CorganStatus {
    guard(|| {
        let m = handle(m, "matrix")?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let v = m.inner.values();
        if len < v.len() {
            return Err(Failure::Arg(CorganStatus::InvalidArgument, format!("buffer holds {len} values, need {}", v.len())));
        }
        std::slice::from_raw_parts_mut(buf, v.len()).copy_from_slice(v);
        Ok(())
    })
}

/// Releases a matrix. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn corgan_matrix_free(m: *mut CorganMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Samples a banded correlated binary corpus with marginals drawn uniformly
/// from `[marginal_lo, marginal_hi]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn corgan_synth_corpus(
    n: usize,
    m: usize,
    band: usize,
    marginal_lo: f64,
    marginal_hi: f64,
    seed: u64,
    out: *mut *mut CorganMatrix,
) -> CorganStatus {
    guard(|| {
        let marginals = data::random_marginals(m, marginal_lo, marginal_hi, seed)?;
        put(out, CorganMatrix { inner: data::synth_corpus(n, m, band, &marginals, seed.wrapping_add(1))? })
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn corgan_model_load(path: *const c_char, out: *mut *mut CorganModel) -> CorganStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, CorganModel { inner: ModelBundle::load(p)? })
    })
}

/// Saves a model checkpoint.
///
/// # Safety
/// `model` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn corgan_model_save(model: *const CorganModel, path: *const c_char) -> CorganStatus {
    guard(|| {
        let model = handle(model, "model")?;
        Ok(model.inner.save(path_arg(path, "path")?)?)
    })
}

/// Record width produced by the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn corgan_model_record_width(model: *const CorganModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.descriptor.record_width)
}

/// Draws `count` synthetic records.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn corgan_model_generate(model: *const CorganModel, count: usize, seed: u64, out: *mut *mut CorganMatrix) -> CorganStatus {
    guard(|| {
        let model = handle(model, "model")?;
        put(out, CorganMatrix { inner: corgan::pipeline::sample(&model.inner, count, seed)? })
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn corgan_model_free(model: *mut CorganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mean absolute and maximum deviation of per-column positive rates.
///
/// # Safety
/// Handles must be live; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn corgan_dimension_wise_probability(
    real: *const CorganMatrix,
    syn: *const CorganMatrix,
    mean_abs_dev: *mut f64,
    max_dev: *mut f64,
) -> CorganStatus {
    guard(|| {
        let r = eval::dimension_wise_probability(&handle(real, "real")?.inner, &handle(syn, "syn")?.inner)?;
        *out_arg(mean_abs_dev)? = r.mean_abs_dev;
        *out_arg(max_dev)? = r.max_dev;
        Ok(())
    })
}

/// Area under the ROC curve for 0/1 `labels` and `scores` of length `n`.
///
/// # Safety
/// `labels` and `scores` must point to `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn corgan_auroc(labels: *const u8, scores: *const f64, n: usize, out: *mut f64) -> CorganStatus {
    guard(|| {
        if labels.is_null() || scores.is_null() {
            return Err(null("labels or scores"));
        }
        let y = std::slice::from_raw_parts(labels, n);
        let s = std::slice::from_raw_parts(scores, n);
        *out_arg(out)? = eval::auroc(y, s)?;
        Ok(())
    })
}

/// Runs the membership-inference attack with `u / 2` known members drawn
/// from `train` and `u / 2` known non-members from `test`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn corgan_attack(
    train: *const CorganMatrix,
    test: *const CorganMatrix,
    syn: *const CorganMatrix,
    u: usize,
    threshold_count: usize,
    threshold_mean: f64,
    threshold_std: f64,
    seed: u64,
    out: *mut CorganAttackSummary,
) -> CorganStatus {
    guard(|| {
        let (train, test, syn) = (handle(train, "train")?, handle(test, "test")?, handle(syn, "syn")?);
        let out = out_arg(out)?;
        let spec = ThresholdSpec { count: threshold_count, mean: threshold_mean, std: threshold_std };
        let thresholds = privacy::sample_thresholds(spec, seed)?;
        let (members, non_members) = privacy::draw_known(&train.inner, &test.inner, u / 2, seed.wrapping_add(1))?;
        let report = privacy::run_attack(&AttackSetup { members, non_members, thresholds }, &syn.inner)?;
        *out = match report.best_row() {
            Some(b) => CorganAttackSummary { any_flagged: 1, threshold: b.threshold, precision: b.precision, recall: b.recall, f1: b.f1 },
            None => CorganAttackSummary::default(),
        };
        Ok(())
    })
}
