//! C ABI over the glucoguard core.
//!
//! Handles are opaque pointers owned by this library; every constructor
//! has a matching `_free`, and all functions return a [`GgStatus`]
//! code (out-parameters carry results). No panics cross the boundary.

use std::ffi::CStr;
use std::path::Path;

use libc::c_char;

use glucoguard::datagen::{generate_dataset, write_csv, GeneratorConfig};
use glucoguard::detector::{load_model, RandomForest};
use glucoguard::ledger::{validate_chain, store, Block};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GgStatus {
    Ok = 0,
    /// File could not be read or written.
    Io = 1,
    /// File contents are not in the expected format.
    Format = 2,
    /// Chain validation failed; see the out-parameter for the block.
    Integrity = 3,
    /// A null pointer, bad UTF-8 path, or out-of-range argument.
    InvalidArgument = 4,
    Internal = 5,
}

/// Opaque handle to a loaded detection model.
pub struct GgModel {
    inner: RandomForest,
}

/// Opaque handle to a block store loaded from disk.
pub struct GgChain {
    blocks: Vec<Block>,
}

fn path_from(ptr: *const c_char) -> Result<&'static Path, GgStatus> {
    if ptr.is_null() {
        return Err(GgStatus::InvalidArgument);
    }
    // SAFETY: caller guarantees a NUL-terminated string; the reference
    // only lives for the duration of the call.
    let raw = unsafe { CStr::from_ptr(ptr) };
    let text = raw.to_str().map_err(|_| GgStatus::InvalidArgument)?;
    Ok(Path::new(unsafe { std::mem::transmute::<&str, &'static str>(text) }))
}

/// Loads a model file.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to a valid
/// pointer slot. On `GG_STATUS_OK` the slot owns a handle that must be
/// released with [`gg_model_free`].
#[no_mangle]
pub unsafe extern "C" fn gg_model_load(path: *const c_char, out: *mut *mut GgModel) -> GgStatus {
    if out.is_null() {
        return GgStatus::InvalidArgument;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_model(path) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(GgModel { inner: model }));
            GgStatus::Ok
        }
        Err(glucoguard::detector::DetectorError::Io(_)) => GgStatus::Io,
        Err(_) => GgStatus::Format,
    }
}

/// Scores one sample (five features in model order) and writes the
/// probability and the 0.5-threshold label.
///
/// # Safety
/// `model` must be a live handle from [`gg_model_load`]; `features`
/// must point to five doubles; `probability` and `label` must be valid
/// or null (null skips that output).
#[no_mangle]
pub unsafe extern "C" fn gg_model_predict(
    model: *const GgModel,
    features: *const f64,
    probability: *mut f64,
    label: *mut u8,
) -> GgStatus {
    if model.is_null() || features.is_null() {
        return GgStatus::InvalidArgument;
    }
    let sample: [f64; 5] = std::slice::from_raw_parts(features, 5)
        .try_into()
        .expect("slice of length 5");
    match (*model).inner.predict_proba(&sample) {
        Ok(p) => {
            if !probability.is_null() {
                *probability = p;
            }
            if !label.is_null() {
                *label = (p >= 0.5) as u8;
            }
            GgStatus::Ok
        }
        Err(_) => GgStatus::InvalidArgument,
    }
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from [`gg_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gg_model_free(model: *mut GgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Opens a block store file.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to a valid
/// pointer slot. On `GG_STATUS_OK` the handle must be released with
/// [`gg_chain_free`].
#[no_mangle]
pub unsafe extern "C" fn gg_chain_open(path: *const c_char, out: *mut *mut GgChain) -> GgStatus {
    if out.is_null() {
        return GgStatus::InvalidArgument;
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match store::read_store(path) {
        Ok(blocks) => {
            *out = Box::into_raw(Box::new(GgChain { blocks }));
            GgStatus::Ok
        }
        Err(store::StoreError::Io(_)) => GgStatus::Io,
        Err(_) => GgStatus::Format,
    }
}

/// Number of blocks in an open store.
///
/// # Safety
/// `chain` must be a live handle from [`gg_chain_open`].
#[no_mangle]
pub unsafe extern "C" fn gg_chain_len(chain: *const GgChain) -> u64 {
    if chain.is_null() {
        return 0;
    }
    (*chain).blocks.len() as u64
}

/// Re-derives every stored digest. Returns `GG_STATUS_OK` for an intact
/// chain; on `GG_STATUS_INTEGRITY` the failing block's index lands in
/// `failed_block_index` (when non-null).
///
/// # Safety
/// `chain` must be a live handle; `failed_block_index` must be valid or
/// null.
#[no_mangle]
pub unsafe extern "C" fn gg_chain_verify(
    chain: *const GgChain,
    failed_block_index: *mut u64,
) -> GgStatus {
    if chain.is_null() {
        return GgStatus::InvalidArgument;
    }
    match validate_chain(&(*chain).blocks) {
        Ok(()) => GgStatus::Ok,
        Err(e) => {
            if !failed_block_index.is_null() {
                *failed_block_index = e.block_index;
            }
            GgStatus::Integrity
        }
    }
}

/// Releases a chain handle. Null is a no-op.
///
/// # Safety
/// `chain` must have come from [`gg_chain_open`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gg_chain_free(chain: *mut GgChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Generates a calibrated synthetic dataset and writes it as CSV.
/// `label_noise` must lie in [0, 0.5).
///
/// # Safety
/// `out_path` must point to a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gg_generate_dataset_csv(
    n_samples: u64,
    seed: u64,
    label_noise: f64,
    out_path: *const c_char,
) -> GgStatus {
    let path = match path_from(out_path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    let config = GeneratorConfig {
        n_samples: n_samples as usize,
        seed,
        label_noise,
        ..Default::default()
    };
    let samples = match generate_dataset(&config) {
        Ok(s) => s,
        Err(_) => return GgStatus::InvalidArgument,
    };
    match write_csv(path, &samples) {
        Ok(()) => GgStatus::Ok,
        Err(_) => GgStatus::Io,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
