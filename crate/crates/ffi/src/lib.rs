//! C ABI over the simulator: opaque handles, integer status codes, and a
//! thread-local last-error message.
//!
//! Conventions:
//! - Handles (`CflConfig`, `CflRunResult`) are created and destroyed only by
//!   this library; callers treat them as opaque pointers.
//! - Every fallible function returns a [`CflStatus`]; outputs go through out
//!   pointers that are written only on `CFL_STATUS_OK`.
//! - [`cfl_last_error_message`] returns the message for the most recent
//!   failure on the calling thread; the pointer stays valid until the next
//!   failing call on that thread.
//! - Strings returned by value (`cfl_result_csv`) are released with
//!   [`cfl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

use cflsim_core::error::Error;
use cflsim_core::harness::{render_metrics_csv, run_experiment, ExperimentConfig, ExperimentResult};

/// Outcome of a C ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CflStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Text input was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The configuration failed to parse or validate.
    ConfigError = 3,
    /// Data files were missing or malformed.
    DataError = 4,
    /// An index argument was out of range.
    OutOfRange = 5,
    /// The simulation itself failed.
    RuntimeError = 6,
}

/// Opaque experiment configuration handle.
pub struct CflConfig {
    inner: ExperimentConfig,
}

/// Opaque finished-run handle.
pub struct CflRunResult {
    config: ExperimentConfig,
    inner: ExperimentResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let cstring = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message unavailable").expect("static"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_of(err: &Error) -> CflStatus {
    if err.is_config() {
        CflStatus::ConfigError
    } else if err.is_data() {
        CflStatus::DataError
    } else {
        CflStatus::RuntimeError
    }
}

fn fail(err: &Error) -> CflStatus {
    let status = status_of(err);
    set_last_error(err.to_string());
    status
}

/// Message of the most recent failure on this thread, or null if none.
///
/// The pointer remains valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cfl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Parse a TOML experiment configuration.
///
/// # Safety
/// `toml_text` must point to a NUL-terminated string and `out` must be a
/// valid pointer; `*out` is written only on success and must be released
/// with [`cfl_config_free`].
#[no_mangle]
pub unsafe extern "C" fn cfl_config_parse(
    toml_text: *const c_char,
    out: *mut *mut CflConfig,
) -> CflStatus {
    if toml_text.is_null() || out.is_null() {
        return CflStatus::NullPointer;
    }
    let text = match CStr::from_ptr(toml_text).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_last_error("configuration text is not valid UTF-8".into());
            return CflStatus::InvalidUtf8;
        }
    };
    match ExperimentConfig::from_toml(text) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(CflConfig { inner: cfg }));
            CflStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a configuration handle. Null is ignored.
///
/// # Safety
/// `cfg` must be null or a pointer from [`cfl_config_parse`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfl_config_free(cfg: *mut CflConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Override the lambda mixing weight.
///
/// # Safety
/// `cfg` must be a live pointer from [`cfl_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn cfl_config_set_lambda(cfg: *mut CflConfig, lambda: f64) -> CflStatus {
    let Some(cfg) = cfg.as_mut() else {
        return CflStatus::NullPointer;
    };
    if !(0.0..=1.0).contains(&lambda) {
        set_last_error(format!("lambda must lie in [0, 1], got {lambda}"));
        return CflStatus::ConfigError;
    }
    cfg.inner.lambda = lambda;
    CflStatus::Ok
}

/// Override the master seed.
///
/// # Safety
/// `cfg` must be a live pointer from [`cfl_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn cfl_config_set_master_seed(
    cfg: *mut CflConfig,
    master_seed: u64,
) -> CflStatus {
    let Some(cfg) = cfg.as_mut() else {
        return CflStatus::NullPointer;
    };
    cfg.inner.master_seed = master_seed;
    CflStatus::Ok
}

/// Run the configured experiment to completion.
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` a valid pointer;
/// `*out` is written only on success and must be released with
/// [`cfl_result_free`].
#[no_mangle]
pub unsafe extern "C" fn cfl_run(cfg: *const CflConfig, out: *mut *mut CflRunResult) -> CflStatus {
    let Some(cfg) = cfg.as_ref() else {
        return CflStatus::NullPointer;
    };
    if out.is_null() {
        return CflStatus::NullPointer;
    }
    match run_experiment(&cfg.inner) {
        Ok(result) => {
            *out = Box::into_raw(Box::new(CflRunResult {
                config: cfg.inner.clone(),
                inner: result,
            }));
            CflStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a run-result handle. Null is ignored.
///
/// # Safety
/// `result` must be null or a pointer from [`cfl_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfl_result_free(result: *mut CflRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of completed rounds.
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`].
#[no_mangle]
pub unsafe extern "C" fn cfl_result_rounds(result: *const CflRunResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.records.len())
}

/// Number of clusters K.
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`].
#[no_mangle]
pub unsafe extern "C" fn cfl_result_clusters(result: *const CflRunResult) -> usize {
    result.as_ref().map_or(0, |r| r.config.clusters)
}

/// Number of devices M.
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`].
#[no_mangle]
pub unsafe extern "C" fn cfl_result_devices(result: *const CflRunResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.final_identities.len())
}

/// Clustering purity of one round.
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`] and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cfl_result_purity(
    result: *const CflRunResult,
    round: usize,
    out: *mut f64,
) -> CflStatus {
    let Some(r) = result.as_ref() else {
        return CflStatus::NullPointer;
    };
    if out.is_null() {
        return CflStatus::NullPointer;
    }
    match r.inner.records.get(round) {
        Some(rec) => {
            *out = rec.purity;
            CflStatus::Ok
        }
        None => CflStatus::OutOfRange,
    }
}

/// Mean test accuracy of one round; NaN when evaluation was skipped there.
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`] and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cfl_result_accuracy(
    result: *const CflRunResult,
    round: usize,
    out: *mut f64,
) -> CflStatus {
    let Some(r) = result.as_ref() else {
        return CflStatus::NullPointer;
    };
    if out.is_null() {
        return CflStatus::NullPointer;
    }
    match r.inner.records.get(round) {
        Some(rec) => {
            *out = rec.accuracy.unwrap_or(f64::NAN);
            CflStatus::Ok
        }
        None => CflStatus::OutOfRange,
    }
}

/// Size of one cluster after one round.
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`] and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cfl_result_cluster_size(
    result: *const CflRunResult,
    round: usize,
    cluster: usize,
    out: *mut usize,
) -> CflStatus {
    let Some(r) = result.as_ref() else {
        return CflStatus::NullPointer;
    };
    if out.is_null() {
        return CflStatus::NullPointer;
    }
    match r.inner.records.get(round).and_then(|rec| rec.cluster_sizes.get(cluster)) {
        Some(&size) => {
            *out = size;
            CflStatus::Ok
        }
        None => CflStatus::OutOfRange,
    }
}

/// Mean member train loss of one cluster after one round; NaN when the
/// cluster was empty.
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`] and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cfl_result_cluster_loss(
    result: *const CflRunResult,
    round: usize,
    cluster: usize,
    out: *mut f64,
) -> CflStatus {
    let Some(r) = result.as_ref() else {
        return CflStatus::NullPointer;
    };
    if out.is_null() {
        return CflStatus::NullPointer;
    }
    match r.inner.records.get(round).and_then(|rec| rec.cluster_losses.get(cluster)) {
        Some(loss) => {
            *out = loss.unwrap_or(f64::NAN);
            CflStatus::Ok
        }
        None => CflStatus::OutOfRange,
    }
}

/// Final cluster identity of one device.
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`] and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cfl_result_final_identity(
    result: *const CflRunResult,
    device: usize,
    out: *mut usize,
) -> CflStatus {
    let Some(r) = result.as_ref() else {
        return CflStatus::NullPointer;
    };
    if out.is_null() {
        return CflStatus::NullPointer;
    }
    match r.inner.final_identities.get(device) {
        Some(&id) => {
            *out = id;
            CflStatus::Ok
        }
        None => CflStatus::OutOfRange,
    }
}

/// Render the round-records CSV; release with [`cfl_string_free`].
///
/// # Safety
/// `result` must be a live pointer from [`cfl_run`].
#[no_mangle]
pub unsafe extern "C" fn cfl_result_csv(result: *const CflRunResult) -> *mut c_char {
    let Some(r) = result.as_ref() else {
        return std::ptr::null_mut();
    };
    let csv = render_metrics_csv(&r.config, &r.inner);
    CString::new(csv)
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer returned by [`cfl_result_csv`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn cfl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = "task = \"synthetic\"\nclusters = 2\nrounds = 2\nmaster_seed = 4\n\
                          batch_size = 16\nhidden_dims = [8, 8]\n\
                          [synthetic]\ndevices_per_cluster = 2\nsamples_per_device = 60\n";

    fn c_string(text: &str) -> CString {
        CString::new(text).unwrap()
    }

    #[test]
    fn parse_run_inspect_free() {
        unsafe {
            let text = c_string(CONFIG);
            let mut cfg: *mut CflConfig = std::ptr::null_mut();
            assert_eq!(cfl_config_parse(text.as_ptr(), &mut cfg), CflStatus::Ok);
            assert!(!cfg.is_null());

            let mut result: *mut CflRunResult = std::ptr::null_mut();
            assert_eq!(cfl_run(cfg, &mut result), CflStatus::Ok);
            assert_eq!(cfl_result_rounds(result), 2);
            assert_eq!(cfl_result_clusters(result), 2);
            assert_eq!(cfl_result_devices(result), 4);

            let mut purity = 0.0;
            assert_eq!(cfl_result_purity(result, 1, &mut purity), CflStatus::Ok);
            assert!((0.0..=1.0).contains(&purity));

            let mut acc = 0.0;
            assert_eq!(cfl_result_accuracy(result, 1, &mut acc), CflStatus::Ok);
            assert!((0.0..=1.0).contains(&acc));

            let mut size = 0usize;
            assert_eq!(cfl_result_cluster_size(result, 1, 0, &mut size), CflStatus::Ok);
            let mut other = 0usize;
            assert_eq!(cfl_result_cluster_size(result, 1, 1, &mut other), CflStatus::Ok);
            assert_eq!(size + other, 4);

            let mut id = 0usize;
            assert_eq!(cfl_result_final_identity(result, 3, &mut id), CflStatus::Ok);
            assert!(id < 2);

            assert_eq!(
                cfl_result_purity(result, 99, &mut purity),
                CflStatus::OutOfRange
            );

            let csv = cfl_result_csv(result);
            assert!(!csv.is_null());
            let text = CStr::from_ptr(csv).to_str().unwrap();
            assert!(text.starts_with("# cflsim schema=1"));
            cfl_string_free(csv);

            cfl_result_free(result);
            cfl_config_free(cfg);
        }
    }

    #[test]
    fn config_errors_set_message() {
        unsafe {
            let text = c_string("task = \"synthetic\"\nclusters = 0\nrounds = 1\nmaster_seed = 1\n");
            let mut cfg: *mut CflConfig = std::ptr::null_mut();
            assert_eq!(cfl_config_parse(text.as_ptr(), &mut cfg), CflStatus::ConfigError);
            let msg = cfl_last_error_message();
            assert!(!msg.is_null());
            let msg = CStr::from_ptr(msg).to_str().unwrap();
            assert!(msg.contains("clusters"), "{msg}");
        }
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            let mut cfg: *mut CflConfig = std::ptr::null_mut();
            assert_eq!(
                cfl_config_parse(std::ptr::null(), &mut cfg),
                CflStatus::NullPointer
            );
            let mut result: *mut CflRunResult = std::ptr::null_mut();
            assert_eq!(cfl_run(std::ptr::null(), &mut result), CflStatus::NullPointer);
            assert_eq!(cfl_result_rounds(std::ptr::null()), 0);
            cfl_config_free(std::ptr::null_mut());
            cfl_result_free(std::ptr::null_mut());
            cfl_string_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn setters_mutate_config() {
        unsafe {
            let text = c_string(CONFIG);
            let mut cfg: *mut CflConfig = std::ptr::null_mut();
            assert_eq!(cfl_config_parse(text.as_ptr(), &mut cfg), CflStatus::Ok);
            assert_eq!(cfl_config_set_lambda(cfg, 0.7), CflStatus::Ok);
            assert_eq!(cfl_config_set_lambda(cfg, 1.5), CflStatus::ConfigError);
            assert_eq!(cfl_config_set_master_seed(cfg, 123), CflStatus::Ok);
            assert_eq!((*cfg).inner.lambda, 0.7);
            assert_eq!((*cfg).inner.master_seed, 123);
            cfl_config_free(cfg);
        }
    }
}
