//! C ABI for the visual realism assessment pipeline.
//!
//! Stores and models are opaque handles created and destroyed by this
//! library. Every function returns a [`VraStatus`]; on failure a
//! thread-local message is readable through [`vra_last_error`] until the
//! next call on the same thread. The generated header lives in
//! `include/vra.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use vra_core::checkpoint::load_checkpoint;
use vra_core::geometry::{scale_bbox, BBox};
use vra_core::inference::{average_predictions, predict_repeated};
use vra_core::metrics::{final_score, set_metrics, SetMetrics};
use vra_core::pooling::pool_concat;
use vra_core::store::FeatureStore;
use vra_core::trainer::TrainedModel;
use vra_core::VraError;

/// Result code returned by every function in this ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VraStatus {
    /// The call succeeded.
    Ok = 0,
    /// Invalid configuration or argument values.
    UsageError = 1,
    /// Missing, malformed, or inconsistent data.
    DataError = 2,
    /// A numeric invariant failed (degenerate input, undefined statistic).
    NumericError = 3,
    /// A required pointer argument was null.
    NullArgument = 4,
    /// A string argument was not valid UTF-8.
    InvalidString = 5,
    /// An internal invariant was violated; the library state is unchanged.
    InternalPanic = 6,
}

/// Opaque handle to an opened feature store.
pub struct VraStore(FeatureStore);

/// Opaque handle to a loaded regression-head checkpoint.
pub struct VraModel(TrainedModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(err: &VraError) -> VraStatus {
    set_last_error(&err.to_string());
    match err.exit_code() {
        1 => VraStatus::UsageError,
        3 => VraStatus::NumericError,
        _ => VraStatus::DataError,
    }
}

fn guarded(body: impl FnOnce() -> VraStatus) -> VraStatus {
    catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|_| {
        set_last_error("internal panic");
        VraStatus::InternalPanic
    })
}

/// # Safety
/// `ptr` must be null or point at a NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char) -> Result<&'a str, VraStatus> {
    if ptr.is_null() {
        set_last_error("null string argument");
        return Err(VraStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        VraStatus::InvalidString
    })
}

fn required_out<T>(ptr: *mut T) -> Result<*mut T, VraStatus> {
    if ptr.is_null() {
        set_last_error("null output argument");
        Err(VraStatus::NullArgument)
    } else {
        Ok(ptr)
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vra_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread.
///
/// The pointer stays valid until the next vra_* call on the same thread.
#[no_mangle]
pub extern "C" fn vra_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Open a feature store directory. On success `*out` owns the handle and
/// must be released with `vra_store_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vra_store_open(path: *const c_char, out: *mut *mut VraStore) -> VraStatus {
    guarded(|| {
        let path = match required_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match FeatureStore::open(Path::new(path)) {
            Ok(store) => {
                *out = Box::into_raw(Box::new(VraStore(store)));
                VraStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a store handle. Null is a no-op.
///
/// # Safety
/// `store` must be null or a pointer returned by `vra_store_open` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn vra_store_free(store: *mut VraStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of videos in the store.
///
/// # Safety
/// `store` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vra_store_video_count(
    store: *const VraStore,
    out: *mut usize,
) -> VraStatus {
    guarded(|| {
        if store.is_null() {
            set_last_error("null store handle");
            return VraStatus::NullArgument;
        }
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        *out = (*store).0.len();
        VraStatus::Ok
    })
}

/// Per-frame feature dimension of the store.
///
/// # Safety
/// `store` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vra_store_feature_dim(
    store: *const VraStore,
    out: *mut usize,
) -> VraStatus {
    guarded(|| {
        if store.is_null() {
            set_last_error("null store handle");
            return VraStatus::NullArgument;
        }
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        *out = (*store).0.dim();
        VraStatus::Ok
    })
}

/// Load a checkpoint file. On success `*out` owns the handle and must be
/// released with `vra_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vra_model_load(path: *const c_char, out: *mut *mut VraModel) -> VraStatus {
    guarded(|| {
        let path = match required_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_checkpoint(Path::new(path)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(VraModel(model)));
                VraStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer returned by `vra_model_load` that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn vra_model_free(model: *mut VraModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the pooled vector the model expects (twice the feature dim).
///
/// # Safety
/// `model` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vra_model_input_dim(
    model: *const VraModel,
    out: *mut usize,
) -> VraStatus {
    guarded(|| {
        if model.is_null() {
            set_last_error("null model handle");
            return VraStatus::NullArgument;
        }
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        *out = (*model).0.params.input_dim;
        VraStatus::Ok
    })
}

/// Predict the MOS of one video: `repeats` window draws seeded from
/// `(base_seed, repeat, video_id)`, averaged. Uses the window length the
/// checkpoint was trained with.
///
/// # Safety
/// `model` and `store` must be live handles, `video_id` a NUL-terminated
/// string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vra_predict_mos(
    model: *const VraModel,
    store: *const VraStore,
    video_id: *const c_char,
    repeats: usize,
    base_seed: u64,
    out: *mut f64,
) -> VraStatus {
    guarded(|| {
        if model.is_null() || store.is_null() {
            set_last_error("null handle");
            return VraStatus::NullArgument;
        }
        let video_id = match required_str(video_id) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let model = &(*model).0;
        let ids = vec![video_id.to_owned()];
        let set = predict_repeated(
            &model.params,
            &(*store).0,
            &ids,
            repeats,
            model.config.sequence_length,
            base_seed,
            false,
        );
        match set {
            Ok(set) => {
                *out = average_predictions(&set)[0];
                VraStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Pool a row-major `n_frames x dim` frame-feature block into the
/// mean-then-std concatenation. `out` must hold `2 * dim` doubles.
///
/// # Safety
/// `features` must point at `n_frames * dim` floats and `out` at
/// `2 * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn vra_pool_concat(
    features: *const f32,
    n_frames: usize,
    dim: usize,
    out: *mut f64,
) -> VraStatus {
    guarded(|| {
        if features.is_null() {
            set_last_error("null feature pointer");
            return VraStatus::NullArgument;
        }
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let view = ndarray::ArrayView2::from_shape_ptr((n_frames, dim), features);
        match pool_concat(view) {
            Ok(pooled) => {
                let concat = pooled.into_concat();
                std::ptr::copy_nonoverlapping(concat.as_ptr(), out, 2 * dim);
                VraStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Score one prediction set against its labels. Any of the three output
/// pointers may be null to skip that statistic.
///
/// # Safety
/// `predictions` and `labels` must each point at `n` doubles; non-null
/// output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn vra_set_metrics(
    predictions: *const f64,
    labels: *const f64,
    n: usize,
    out_plcc: *mut f64,
    out_srcc: *mut f64,
    out_rmse: *mut f64,
) -> VraStatus {
    guarded(|| {
        if predictions.is_null() || labels.is_null() {
            set_last_error("null input array");
            return VraStatus::NullArgument;
        }
        let preds = std::slice::from_raw_parts(predictions, n);
        let labels = std::slice::from_raw_parts(labels, n);
        match set_metrics(preds, labels) {
            Ok(m) => {
                if !out_plcc.is_null() {
                    *out_plcc = m.plcc;
                }
                if !out_srcc.is_null() {
                    *out_srcc = m.srcc;
                }
                if !out_rmse.is_null() {
                    *out_rmse = m.rmse;
                }
                VraStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Competition score over test sets: the unweighted mean of
/// `(plcc + srcc) / 2` across the `n_sets` pairs.
///
/// # Safety
/// `plcc` and `srcc` must each point at `n_sets` doubles; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vra_final_score(
    plcc: *const f64,
    srcc: *const f64,
    n_sets: usize,
    out: *mut f64,
) -> VraStatus {
    guarded(|| {
        if plcc.is_null() || srcc.is_null() {
            set_last_error("null input array");
            return VraStatus::NullArgument;
        }
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let plcc = std::slice::from_raw_parts(plcc, n_sets);
        let srcc = std::slice::from_raw_parts(srcc, n_sets);
        let sets: Vec<SetMetrics> = plcc
            .iter()
            .zip(srcc)
            .map(|(&p, &s)| SetMetrics {
                plcc: p,
                srcc: s,
                rmse: 0.0,
                n: 0,
            })
            .collect();
        match final_score(&sets) {
            Ok(score) => {
                *out = score;
                VraStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Expand a face box about its center by `factor` and clamp it to a
/// `width x height` image. `out` receives x1, y1, x2, y2.
///
/// # Safety
/// `out` must point at four doubles.
#[no_mangle]
pub unsafe extern "C" fn vra_scale_bbox(
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    factor: f64,
    width: f64,
    height: f64,
    out: *mut f64,
) -> VraStatus {
    guarded(|| {
        let out = match required_out(out) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let scaled = BBox::new(x1, y1, x2, y2).and_then(|b| scale_bbox(&b, factor, width, height));
        match scaled {
            Ok(b) => {
                let coords = [b.x1, b.y1, b.x2, b.y2];
                std::ptr::copy_nonoverlapping(coords.as_ptr(), out, 4);
                VraStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
