//! C ABI over the sparsebm library: opaque handles, integer status
//! codes, and a thread-local last-error message.
//!
//! Handles returned by `*_load` functions own their Rust objects; free
//! them with the matching `*_free`. All functions are safe to call from
//! any thread as long as a handle is not freed while in use.

use libc::c_char;
use sparsebm::data::{load_canonical, DatasetSplit};
use sparsebm::error::Error;
use sparsebm::evaluation::{avg_test_log_prob, exact_log_partition};
use sparsebm::io::{load_rbm, save_rbm};
use sparsebm::pruning::{sparsity, PruneMask};
use sparsebm::rbm::{free_energy, hidden_conditional, BinaryVector, RbmParams};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::Path;

/// Status code of every fallible call. `SBM_STATUS_OK` is zero; anything
/// else leaves a message readable via `sbm_last_error_message`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SbmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    Config = 2,
    Data = 3,
    /// The request exceeds what the method can compute.
    Capability = 4,
    Numeric = 5,
    Shape = 6,
    Usage = 7,
    Io = 8,
}

/// A loaded RBM: parameters plus the optional prune mask.
pub struct SbmModel {
    params: RbmParams,
    mask: Option<PruneMask>,
}

/// A loaded dataset in the canonical binary container format.
pub struct SbmDataset {
    split: DatasetSplit,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> SbmStatus {
    set_error(&err.to_string());
    match err {
        Error::Shape(_) => SbmStatus::Shape,
        Error::Domain(_) => SbmStatus::Data,
        Error::Usage(_) => SbmStatus::Usage,
        Error::Capability(_) => SbmStatus::Capability,
        Error::Numeric(_) => SbmStatus::Numeric,
        Error::Format { .. } => SbmStatus::Data,
        Error::Config(_) => SbmStatus::Config,
        Error::Io { .. } => SbmStatus::Io,
    }
}

fn null_arg(what: &str) -> SbmStatus {
    set_error(&format!("null argument: {what}"));
    SbmStatus::NullArgument
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string.
unsafe fn path_from(ptr: *const c_char) -> Option<&'static Path> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok().map(|s| Path::new(s) as _)
}

/// Message describing the most recent failure on this thread. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sbm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads an RBM container. On success writes a handle to `out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_load(path: *const c_char, out: *mut *mut SbmModel) -> SbmStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let Some(path) = path_from(path) else { return null_arg("path") };
    match load_rbm(path) {
        Ok((params, mask)) => {
            *out = Box::into_raw(Box::new(SbmModel { params, mask }));
            SbmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Writes the model (and its mask, when present) back to disk.
///
/// # Safety
/// `model` must come from `sbm_model_load`; `path` must be a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_save(model: *const SbmModel, path: *const c_char) -> SbmStatus {
    let Some(m) = model.as_ref() else { return null_arg("model") };
    let Some(path) = path_from(path) else { return null_arg("path") };
    match save_rbm(&m.params, m.mask.as_ref(), path) {
        Ok(()) => SbmStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `sbm_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_free(model: *mut SbmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of visible units; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_n_visible(model: *const SbmModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.n_visible())
}

/// Number of hidden units; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_n_hidden(model: *const SbmModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.n_hidden())
}

/// Fraction of pruned connections (0 when the model carries no mask).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_sparsity(model: *const SbmModel) -> f64 {
    model.as_ref().and_then(|m| m.mask.as_ref()).map_or(0.0, sparsity)
}

/// Free energy of one binary visible vector (`v`, `len` bytes of 0/1),
/// so that `log p(v) = -F(v) - log Z`.
///
/// # Safety
/// `v` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_free_energy(
    model: *const SbmModel,
    v: *const u8,
    len: usize,
    out: *mut f64,
) -> SbmStatus {
    let Some(m) = model.as_ref() else { return null_arg("model") };
    if v.is_null() {
        return null_arg("v");
    }
    if out.is_null() {
        return null_arg("out");
    }
    let bits = std::slice::from_raw_parts(v, len);
    let vec = match BinaryVector::from_bits(bits) {
        Ok(b) => b,
        Err(e) => return status_of(&e),
    };
    match free_energy(&m.params, &vec) {
        Ok(f) => {
            *out = f;
            SbmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Hidden activation probabilities `p(h_j = 1 | v)`; `out` must hold
/// `sbm_model_n_hidden` doubles.
///
/// # Safety
/// `v` must point to `len` readable bytes; `out` to `out_len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_hidden_probs(
    model: *const SbmModel,
    v: *const u8,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> SbmStatus {
    let Some(m) = model.as_ref() else { return null_arg("model") };
    if v.is_null() {
        return null_arg("v");
    }
    if out.is_null() {
        return null_arg("out");
    }
    if out_len < m.params.n_hidden() {
        set_error(&format!(
            "output buffer holds {out_len} doubles, model has {} hidden units",
            m.params.n_hidden()
        ));
        return SbmStatus::Shape;
    }
    let bits = std::slice::from_raw_parts(v, len);
    let vec = match BinaryVector::from_bits(bits) {
        Ok(b) => b,
        Err(e) => return status_of(&e),
    };
    match hidden_conditional(&m.params, &vec) {
        Ok(probs) => {
            let dst = std::slice::from_raw_parts_mut(out, m.params.n_hidden());
            for (d, &p) in dst.iter_mut().zip(probs.iter()) {
                *d = p;
            }
            SbmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Exact log partition function by brute-force enumeration of the
/// smaller layer; fails with `SBM_STATUS_CAPABILITY` when that layer
/// exceeds `limit` units.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sbm_model_exact_log_z(
    model: *const SbmModel,
    limit: usize,
    out: *mut f64,
) -> SbmStatus {
    let Some(m) = model.as_ref() else { return null_arg("model") };
    if out.is_null() {
        return null_arg("out");
    }
    match exact_log_partition(&m.params, limit) {
        Ok(lz) => {
            *out = lz;
            SbmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Loads a dataset stored in the canonical binary container.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn sbm_dataset_load(
    path: *const c_char,
    out: *mut *mut SbmDataset,
) -> SbmStatus {
    if out.is_null() {
        return null_arg("out");
    }
    let Some(path) = path_from(path) else { return null_arg("path") };
    match load_canonical(path) {
        Ok(split) => {
            *out = Box::into_raw(Box::new(SbmDataset { split }));
            SbmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `dataset` must come from `sbm_dataset_load` and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn sbm_dataset_free(dataset: *mut SbmDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of examples; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_dataset_rows(dataset: *const SbmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.split.len())
}

/// Pixels per example; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sbm_dataset_width(dataset: *const SbmDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.split.width())
}

/// Mean log-probability of the dataset under the model given `log_z`
/// (from `sbm_model_exact_log_z` or an external estimate), in nats.
///
/// # Safety
/// `out` must be writable; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn sbm_avg_log_prob(
    model: *const SbmModel,
    dataset: *const SbmDataset,
    log_z: f64,
    out: *mut f64,
) -> SbmStatus {
    let Some(m) = model.as_ref() else { return null_arg("model") };
    let Some(d) = dataset.as_ref() else { return null_arg("dataset") };
    if out.is_null() {
        return null_arg("out");
    }
    match avg_test_log_prob(&m.params, log_z, &d.split) {
        Ok(avg) => {
            *out = avg;
            SbmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}
