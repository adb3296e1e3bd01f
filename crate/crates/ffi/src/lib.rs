//! C ABI over the `superpos` library.
//!
//! Every fallible function returns an [`SpStatus`]; on failure the message is
//! kept per thread and can be copied out with [`sp_last_error_message`].
//! Handles are opaque and must be released with their matching `_free`.
//! Strings returned by the library are freed with [`sp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use superpos::backbone::{load_checkpoint, FrozenBackbone};
use superpos::harness::{run_with_backbone, task_spec, ExperimentConfig};
use superpos::metrics::{compute_metric, standardized_overall_scores, MetricKind};
use superpos::reparam;
use superpos::tasks::{generate_task, Prediction, Target};
use superpos::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidParameter = 5,
    Contract = 6,
    Numerical = 7,
    Integrity = 8,
    Panic = 9,
}

/// Prompt reparameterization selector for [`sp_trainable_count`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpMethod {
    Simple = 0,
    Superpos = 1,
    SoftmaxMixture = 2,
    Residual = 3,
}

/// Metric selector for [`sp_compute_metric`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpMetric {
    Accuracy = 0,
    F1 = 1,
    Mcc = 2,
    Pearson = 3,
    Spearman = 4,
}

/// A frozen, loaded backbone.
pub struct SpBackbone {
    inner: FrozenBackbone,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SpStatus {
    match err {
        Error::Io { .. } => SpStatus::Io,
        Error::Json(_) | Error::Csv(_) | Error::Data(_) => SpStatus::Parse,
        Error::Parameter(_) | Error::Index { .. } | Error::Dimension { .. } => SpStatus::InvalidParameter,
        Error::Contract(_) => SpStatus::Contract,
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => SpStatus::Numerical,
        Error::Integrity(_) => SpStatus::Integrity,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SpStatus, String)>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside superpos");
            SpStatus::Panic
        }
    }
}

fn lib_err(err: Error) -> (SpStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (SpStatus, String) {
    (SpStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SpStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (SpStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (SpStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL,
/// or 0 if there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads and verifies a backbone checkpoint, then freezes it.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_backbone_load(path: *const c_char, out: *mut *mut SpBackbone) -> SpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = load_checkpoint(std::path::Path::new(path)).map_err(lib_err)?.freeze();
        *out = Box::into_raw(Box::new(SpBackbone { inner }));
        Ok(())
    })
}

/// Releases a backbone. Null is ignored.
///
/// # Safety
/// `handle` must come from [`sp_backbone_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_backbone_free(handle: *mut SpBackbone) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Total number of backbone weights.
///
/// # Safety
/// `handle` must be a live backbone; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_backbone_parameter_count(handle: *const SpBackbone, out: *mut usize) -> SpStatus {
    guard(|| {
        let bb = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out_arg(out, "out")? = bb.inner.parameter_count();
        Ok(())
    })
}

/// Content hash of the backbone weights, as recorded in run summaries.
///
/// # Safety
/// `handle` must be a live backbone; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_backbone_weights_hash(handle: *const SpBackbone, out: *mut u64) -> SpStatus {
    guard(|| {
        let bb = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out_arg(out, "out")? = bb.inner.current_hash();
        Ok(())
    })
}

/// Trains one configuration against a loaded backbone.
///
/// `config_json` is an experiment configuration; missing fields take their
/// defaults and `backbone_path` is ignored. On success `*summary_json`
/// receives the run summary, to be released with [`sp_string_free`].
///
/// # Safety
/// `handle` must be a live backbone, `config_json` NUL-terminated, and
/// `summary_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_run_experiment(
    handle: *const SpBackbone,
    config_json: *const c_char,
    summary_json: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let out = out_arg(summary_json, "summary_json")?;
        *out = ptr::null_mut();
        let bb = handle.as_ref().ok_or_else(|| null("handle"))?;
        let text = str_arg(config_json, "config_json")?;
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| lib_err(e.into()))?;
        let spec = task_spec(&config).map_err(lib_err)?;
        let data = generate_task(&spec).map_err(lib_err)?;
        let result = run_with_backbone(&config, &bb.inner, &spec, &data).map_err(lib_err)?;
        let json = serde_json::to_string(&result).map_err(|e| lib_err(e.into()))?;
        *out = CString::new(json)
            .map_err(|_| (SpStatus::Parse, "summary contains NUL".to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Closed-form trainable parameter count of a prompt method.
///
/// `m` is only read for the superposition variants and `bottleneck` only for
/// the residual method.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_trainable_count(
    method: SpMethod,
    model_dim: usize,
    n: usize,
    m: usize,
    bottleneck: usize,
    out: *mut usize,
) -> SpStatus {
    guard(|| {
        *out_arg(out, "out")? = match method {
            SpMethod::Simple => reparam::simple_count(model_dim, n),
            SpMethod::Superpos | SpMethod::SoftmaxMixture => reparam::superpos_count(model_dim, n, m),
            SpMethod::Residual => reparam::residual_count(model_dim, n, bottleneck),
        };
        Ok(())
    })
}

/// Computes one metric in `[-1, 1]` or `[0, 1]`.
///
/// Classification metrics read `predictions` and `targets` as class indices
/// (rounded); correlations read them as real values. `valid[i] == 0` marks
/// prediction `i` as an invalid label; `valid` may be null when all are
/// valid. `*undefined` is set to 1 when the metric is undefined (e.g. zero
/// variance) and the reported value is 0.
///
/// # Safety
/// Array arguments must hold `len` elements; `out` and `undefined` must be
/// writable (`undefined` may be null).
#[no_mangle]
pub unsafe extern "C" fn sp_compute_metric(
    metric: SpMetric,
    predictions: *const f64,
    valid: *const u8,
    targets: *const f64,
    len: usize,
    out: *mut f64,
    undefined: *mut u8,
) -> SpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let preds = slice_arg(predictions, len, "predictions")?;
        let targets = slice_arg(targets, len, "targets")?;
        let valid = if valid.is_null() { None } else { Some(slice_arg(valid, len, "valid")?) };
        let kind = match metric {
            SpMetric::Accuracy => MetricKind::Accuracy,
            SpMetric::F1 => MetricKind::F1,
            SpMetric::Mcc => MetricKind::Mcc,
            SpMetric::Pearson => MetricKind::Pearson,
            SpMetric::Spearman => MetricKind::Spearman,
        };
        let classes = matches!(kind, MetricKind::Accuracy | MetricKind::F1 | MetricKind::Mcc);
        let to_class = |v: f64, what: &str| -> Result<usize, (SpStatus, String)> {
            if v.is_finite() && v >= 0.0 {
                Ok(v.round() as usize)
            } else {
                Err((SpStatus::InvalidParameter, format!("{what} {v} is not a class index")))
            }
        };
        let mut p = Vec::with_capacity(len);
        let mut t = Vec::with_capacity(len);
        for i in 0..len {
            let ok = valid.map_or(true, |v| v[i] != 0);
            p.push(match (ok, classes) {
                (false, _) => Prediction::Invalid,
                (true, true) => Prediction::Class(to_class(preds[i], "prediction")?),
                (true, false) => Prediction::Value(preds[i]),
            });
            t.push(if classes {
                Target::Class(to_class(targets[i], "target")?)
            } else {
                Target::Value(targets[i])
            });
        }
        let score = compute_metric(kind, &p, &t).map_err(lib_err)?;
        *out = score.value;
        if let Some(u) = undefined.as_mut() {
            *u = u8::from(score.undefined);
        }
        Ok(())
    })
}

/// Standardized overall scoring of a row-major `methods x tasks` table.
///
/// NaN cells count as missing. Writes one mean and one standard deviation
/// per method.
///
/// # Safety
/// `table` must hold `methods * tasks` values; `means` and `stds` must each
/// have room for `methods` values.
#[no_mangle]
pub unsafe extern "C" fn sp_standardized_scores(
    table: *const f64,
    methods: usize,
    tasks: usize,
    means: *mut f64,
    stds: *mut f64,
) -> SpStatus {
    guard(|| {
        let cells = slice_arg(table, methods * tasks, "table")?;
        if means.is_null() || stds.is_null() {
            return Err(null("means/stds"));
        }
        let rows: Vec<Vec<Option<f64>>> = cells
            .chunks(tasks.max(1))
            .take(methods)
            .map(|r| r.iter().map(|&v| (!v.is_nan()).then_some(v)).collect())
            .collect();
        let stats = standardized_overall_scores(&rows).map_err(lib_err)?;
        let means = std::slice::from_raw_parts_mut(means, methods);
        let stds = std::slice::from_raw_parts_mut(stds, methods);
        for (i, s) in stats.iter().enumerate() {
            means[i] = s.mean;
            stds[i] = s.std;
        }
        Ok(())
    })
}
