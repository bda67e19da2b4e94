//! C ABI over `gloss-core`.
//!
//! Objects cross the boundary as opaque handles created by constructor
//! functions (`gloss_dataset_blobs`, `gloss_config_default`, `gloss_train`,
//! ...) and released with the matching `*_free`. Every fallible call
//! returns a [`GlossStatus`]; on failure, [`gloss_last_error`] holds a message
//! for the calling thread. Matrices are dense, row-major `double` buffers.
//! Panics never unwind into C: they are caught and reported as
//! `GLOSS_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gloss_core::autodiff::Matrix;
use gloss_core::dataset::{generate_blobs, load_dataset, split, DataFormat, Dataset};
use gloss_core::evaluation::{macro_silhouette, paired_t_test};
use gloss_core::lpa::closed_form_values;
use gloss_core::trainer::{train, TrainConfig, TrainReport};
use gloss_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlossStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    Singular = 5,
    NonConvergence = 6,
    Io = 7,
    Internal = 8,
}

/// Opaque dataset handle.
pub struct GlossDataset(Dataset);

/// Opaque training configuration handle.
pub struct GlossConfig(TrainConfig);

/// Opaque result of one training run.
pub struct GlossReport(TrainReport);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlossMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_silhouette: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlossTTest {
    pub mean_diff: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub dof: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GlossStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) => GlossStatus::Parse,
        Error::Validation(_) | Error::Shape { .. } | Error::NonFinite(_) | Error::Tape(_) => GlossStatus::Validation,
        Error::ConfigKey(_) | Error::Config(_) => GlossStatus::InvalidArgument,
        Error::Singular { .. } => GlossStatus::Singular,
        Error::NonConvergence { .. } => GlossStatus::NonConvergence,
        Error::Io(_) => GlossStatus::Io,
    }
}

/// Failure inside the shim, before or after the core call.
struct Fail(GlossStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GlossStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GlossStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GlossStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            GlossStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GlossStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn matrix(data: &[f64], rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    if data.len() != rows * cols {
        return Err(Fail(GlossStatus::InvalidArgument, format!("{what}: buffer length mismatch")));
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gloss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gloss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Free a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from a `gloss_*` function that documents ownership transfer.
#[no_mangle]
pub unsafe extern "C" fn gloss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a dataset: `.csv` files as text, anything else as the binary format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_dataset_load(path: *const c_char, out: *mut *mut GlossDataset) -> GlossStatus {
    guard(|| {
        let path = Path::new(str_arg(path, "path")?);
        let ds = load_dataset(path, DataFormat::from_path(path))?;
        put(out, GlossDataset(ds), "out")
    })
}

/// Isotropic Gaussian blobs with every pair of centers `sep` apart.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_dataset_blobs(
    n: usize,
    dim: usize,
    num_classes: usize,
    sep: f64,
    seed: u64,
    out: *mut *mut GlossDataset,
) -> GlossStatus {
    guard(|| put(out, GlossDataset(generate_blobs(n, dim, num_classes, sep, seed)?), "out"))
}

/// Dataset from an `n × dim` row-major feature buffer and `n` labels.
///
/// # Safety
/// `features` must hold `n * dim` doubles and `labels` `n` entries.
#[no_mangle]
pub unsafe extern "C" fn gloss_dataset_from_arrays(
    features: *const f64,
    n: usize,
    dim: usize,
    labels: *const usize,
    num_classes: usize,
    out: *mut *mut GlossDataset,
) -> GlossStatus {
    guard(|| {
        let x = matrix(slice_arg(features, n * dim, "features")?, n, dim, "features")?;
        let y = slice_arg(labels, n, "labels")?.to_vec();
        put(out, GlossDataset(Dataset::new(x, y, num_classes, None)?), "out")
    })
}

/// Stratified train/val/test split; the three outputs are new handles.
///
/// # Safety
/// `ds` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_dataset_split(
    ds: *const GlossDataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
    out_train: *mut *mut GlossDataset,
    out_val: *mut *mut GlossDataset,
    out_test: *mut *mut GlossDataset,
) -> GlossStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out_train.is_null() || out_val.is_null() || out_test.is_null() {
            return Err(null("split output"));
        }
        let (tr, va, te) = split(&ds.0, train_frac, val_frac, seed)?;
        put(out_train, GlossDataset(tr), "out_train")?;
        put(out_val, GlossDataset(va), "out_val")?;
        put(out_test, GlossDataset(te), "out_test")
    })
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gloss_dataset_len(ds: *const GlossDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gloss_dataset_dim(ds: *const GlossDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gloss_dataset_num_classes(ds: *const GlossDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.num_classes())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gloss_dataset_free(ds: *mut GlossDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Default configuration.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_config_default(out: *mut *mut GlossConfig) -> GlossStatus {
    guard(|| put(out, GlossConfig(TrainConfig::default()), "out"))
}

/// Configuration from TOML text. Unknown keys give `INVALID_ARGUMENT`.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_config_from_toml(toml: *const c_char, out: *mut *mut GlossConfig) -> GlossStatus {
    guard(|| {
        let cfg = TrainConfig::from_toml_str(str_arg(toml, "toml")?)?;
        put(out, GlossConfig(cfg), "out")
    })
}

/// Apply one `key=value` override, e.g. `"gamma=0.4"` or `"loss=\"scl\""`.
///
/// # Safety
/// `cfg` must be a live handle and `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gloss_config_set(cfg: *mut GlossConfig, assignment: *const c_char) -> GlossStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        cfg.0.apply_override(str_arg(assignment, "assignment")?)?;
        Ok(())
    })
}

/// Configuration as TOML; free the result with [`gloss_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_config_to_toml(cfg: *const GlossConfig, out: *mut *mut c_char) -> GlossStatus {
    guard(|| {
        let text = handle(cfg, "config")?.0.to_toml()?;
        write_string(out, text)
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gloss_config_free(cfg: *mut GlossConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn write_string(out: *mut *mut c_char, text: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(text).map_err(|_| Fail(GlossStatus::Internal, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Train per `cfg` (integrated or standalone) and return the report.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_train(
    cfg: *const GlossConfig,
    train_ds: *const GlossDataset,
    val: *const GlossDataset,
    test: *const GlossDataset,
    out: *mut *mut GlossReport,
) -> GlossStatus {
    guard(|| {
        let cfg = handle(cfg, "config")?;
        let (tr, va, te) = (handle(train_ds, "train")?, handle(val, "val")?, handle(test, "test")?);
        let report = train(&cfg.0, &tr.0, &va.0, &te.0)?;
        put(out, GlossReport(report), "out")
    })
}

/// Final test metrics of a run.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_report_test_metrics(report: *const GlossReport, out: *mut GlossMetrics) -> GlossStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = GlossMetrics {
            accuracy: r.0.test.accuracy,
            macro_f1: r.0.test.macro_f1,
            macro_silhouette: r.0.test.macro_silhouette,
        };
        Ok(())
    })
}

/// Number of epochs run, or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gloss_report_epochs(report: *const GlossReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.early_stop_epoch)
}

/// Run summary as JSON, as written to `summary.json`, with the per-epoch
/// records added back under `epochs`. Free with [`gloss_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_report_to_json(report: *const GlossReport, out: *mut *mut c_char) -> GlossStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let mut v = r.summary_json()?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("epochs".into(), serde_json::to_value(&r.epochs).map_err(Error::from)?);
        }
        write_string(out, v.to_string())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gloss_report_free(report: *mut GlossReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Closed-form propagation `(I - T_uu)^{-1} T_ul Y_l`, clamped at zero and
/// not yet row-normalized. `out` receives `n_u × num_classes` values.
///
/// # Safety
/// Buffers must hold `n_u*n_u`, `n_u*n_l`, `n_l*num_classes` and
/// `n_u*num_classes` doubles respectively.
#[no_mangle]
pub unsafe extern "C" fn gloss_propagate(
    t_uu: *const f64,
    t_ul: *const f64,
    y_l: *const f64,
    n_u: usize,
    n_l: usize,
    num_classes: usize,
    out: *mut f64,
) -> GlossStatus {
    guard(|| {
        let a = matrix(slice_arg(t_uu, n_u * n_u, "t_uu")?, n_u, n_u, "t_uu")?;
        let b = matrix(slice_arg(t_ul, n_u * n_l, "t_ul")?, n_u, n_l, "t_ul")?;
        let y = matrix(slice_arg(y_l, n_l * num_classes, "y_l")?, n_l, num_classes, "y_l")?;
        let res = closed_form_values(&a, &b, &y)?;
        if out.is_null() && !res.is_empty() {
            return Err(null("out"));
        }
        for i in 0..n_u {
            for c in 0..num_classes {
                *out.add(i * num_classes + c) = res[(i, c)];
            }
        }
        Ok(())
    })
}

/// Class-balanced silhouette of `n × dim` embeddings.
///
/// # Safety
/// `z` must hold `n*dim` doubles, `labels` `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_macro_silhouette(
    z: *const f64,
    n: usize,
    dim: usize,
    labels: *const usize,
    out: *mut f64,
) -> GlossStatus {
    guard(|| {
        let z = matrix(slice_arg(z, n * dim, "z")?, n, dim, "z")?;
        let y = slice_arg(labels, n, "labels")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = macro_silhouette(&z, y)?;
        Ok(())
    })
}

/// Two-sided paired t-test on `a - b`.
///
/// # Safety
/// `a` and `b` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gloss_paired_t_test(a: *const f64, b: *const f64, n: usize, out: *mut GlossTTest) -> GlossStatus {
    guard(|| {
        let t = paired_t_test(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = GlossTTest {
            mean_diff: t.mean_diff,
            t_stat: t.t_stat,
            p_value: t.p_value,
            dof: t.dof,
        };
        Ok(())
    })
}
