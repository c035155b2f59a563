//! C interface to the lipkit toolkit.
//!
//! The surface is deliberately small: opaque handles for datasets and
//! trained model bundles, status codes for every fallible call, and JSON
//! strings for structured configuration and reports so the header stays
//! free of mirrored struct definitions. Strings returned through `char**`
//! out-parameters are owned by the caller and must be released with
//! [`lipkit_string_free`]; handles must be released with their matching
//! `_free` function. All functions are safe to call from multiple threads
//! as long as each handle is used from one thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lipkit::attacks::{robust_accuracy, AttackConfig, BinaryScorer, KernelScorer, Norm, Scorer};
use lipkit::certify::{
    gap_delta, gen_convex_equality, gen_gap_law, gen_random, gen_tent, lipschitz_on_grid,
    robust_risk_dual, robust_risk_primal,
};
use lipkit::data::{gen_synthetic, Dataset, ModelBundle, Normalization, Synthetic};
use lipkit::error::Error;
use lipkit::kernels::{median_bandwidth, BaseKernel, KernelSpec};
use lipkit::lipbound::{estimate_all, DomainBox, DualNorm};
use lipkit::rng;
use lipkit::trainer::{train_binary, train_multiclass, Loss, TrainConfig};
use rand::Rng;

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LipkitStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was out of range, inconsistent, or otherwise rejected.
    InvalidArgument = 2,
    /// A JSON configuration or serialized model could not be parsed.
    BadFormat = 3,
    /// A file could not be read or written.
    IoFailed = 4,
    /// Training finished without reaching its stop condition.
    NotConverged = 5,
    /// One of the certification suites exceeded its tolerance.
    CertifyFailed = 6,
    /// An internal invariant failed; the library state is still usable.
    Panicked = 7,
}

/// In-memory training or evaluation data: points with one label each.
pub struct LipkitDataset {
    inner: Dataset,
}

/// A trained scorer bundle: per-class models, input scaling, and the raw
/// label value behind each score index.
pub struct LipkitModel {
    inner: ModelBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn fail(e: &Error) -> LipkitStatus {
    set_error(&e.to_string());
    match e {
        Error::NotConverged { .. } => LipkitStatus::NotConverged,
        Error::DataFormat { .. } | Error::ModelFormat(_) => LipkitStatus::BadFormat,
        Error::Io(_) => LipkitStatus::IoFailed,
        _ => LipkitStatus::InvalidArgument,
    }
}

fn invalid(msg: &str) -> LipkitStatus {
    set_error(msg);
    LipkitStatus::InvalidArgument
}

fn guard(f: impl FnOnce() -> LipkitStatus) -> LipkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unidentified panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            LipkitStatus::Panicked
        }
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string valid for the call.
unsafe fn opt_str<'a>(ptr: *const c_char) -> Result<Option<&'a str>, LipkitStatus> {
    if ptr.is_null() {
        return Ok(None);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Some(s)),
        Err(_) => Err(invalid("string argument is not valid UTF-8")),
    }
}

fn give_string(out: *mut *mut c_char, text: String) -> LipkitStatus {
    match CString::new(text) {
        Ok(c) => {
            unsafe { ptr::write(out, c.into_raw()) };
            LipkitStatus::Ok
        }
        Err(_) => invalid("produced text contained an interior NUL byte"),
    }
}

/// # Safety
/// `points` must hold `n * dim` doubles.
unsafe fn collect_points(
    points: *const f64,
    n: usize,
    dim: usize,
) -> Result<Vec<Vec<f64>>, LipkitStatus> {
    if n == 0 || dim == 0 {
        return Err(invalid("need at least one point and one coordinate"));
    }
    let flat = std::slice::from_raw_parts(points, n * dim);
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(invalid("points must be finite"));
    }
    Ok(flat.chunks(dim).map(<[f64]>::to_vec).collect())
}

/// Ascending distinct label values.
fn distinct_labels(labels: &[f64]) -> Result<Vec<f64>, LipkitStatus> {
    let mut vals: Vec<f64> = labels.to_vec();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    if vals.len() < 2 {
        return Err(invalid("need at least two distinct label values"));
    }
    Ok(vals)
}

fn indices_against(labels: &[f64], classes: &[f64]) -> Result<Vec<usize>, LipkitStatus> {
    labels
        .iter()
        .map(|y| {
            classes
                .iter()
                .position(|c| c == y)
                .ok_or_else(|| invalid("a label value is not among the model's classes"))
        })
        .collect()
}

fn make_scorer(bundle: &ModelBundle) -> Result<Box<dyn Scorer>, Error> {
    if bundle.models.len() == 1 {
        Ok(Box::new(BinaryScorer {
            model: bundle.models[0].clone(),
        }))
    } else {
        Ok(Box::new(KernelScorer::new(bundle.models.clone())?))
    }
}

/// First maximum wins, matching the attack success test.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Library metadata and string memory.

/// Version of the library as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn lipkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the most recent failure on the calling thread. Never
/// null; empty before the first failure. The pointer stays valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lipkit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned through a `char**` out-parameter.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library and
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lipkit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Datasets.

/// Builds a dataset from a row-major array of `n * dim` coordinates and
/// `n` label values.
///
/// # Safety
/// `points` must hold `n * dim` doubles, `labels` must hold `n` doubles,
/// and `out` must be a valid location for the handle.
#[no_mangle]
pub unsafe extern "C" fn lipkit_dataset_new(
    points: *const f64,
    n: usize,
    dim: usize,
    labels: *const f64,
    out: *mut *mut LipkitDataset,
) -> LipkitStatus {
    if points.is_null() || labels.is_null() || out.is_null() {
        set_error("points, labels, and out must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let pts = match collect_points(points, n, dim) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ys = std::slice::from_raw_parts(labels, n);
        if ys.iter().any(|v| !v.is_finite()) {
            return invalid("labels must be finite");
        }
        match Dataset::new(pts, ys.to_vec()) {
            Ok(ds) => {
                ptr::write(out, Box::into_raw(Box::new(LipkitDataset { inner: ds })));
                LipkitStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Draws a labelled synthetic dataset; `task` is `"blobs"` or
/// `"two-moons"` (the latter ignores `classes` and `dim`).
///
/// # Safety
/// `task` must be a NUL-terminated string and `out` a valid location for
/// the handle.
#[no_mangle]
pub unsafe extern "C" fn lipkit_dataset_synthetic(
    task: *const c_char,
    per_class: usize,
    classes: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut LipkitDataset,
) -> LipkitStatus {
    if task.is_null() || out.is_null() {
        set_error("task and out must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let name = match opt_str(task) {
            Ok(s) => s.unwrap_or(""),
            Err(s) => return s,
        };
        let spec = match name {
            "blobs" => Synthetic::Blobs {
                per_class,
                classes,
                dim,
            },
            "two-moons" => Synthetic::TwoMoons { per_class },
            other => {
                return invalid(&format!(
                    "unknown task '{other}', expected 'blobs' or 'two-moons'"
                ))
            }
        };
        match gen_synthetic(&spec, seed) {
            Ok(ds) => {
                ptr::write(out, Box::into_raw(Box::new(LipkitDataset { inner: ds })));
                LipkitStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of examples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn lipkit_dataset_len(ds: *const LipkitDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.points.len())
}

/// Coordinates per example, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn lipkit_dataset_dim(ds: *const LipkitDataset) -> usize {
    ds.as_ref()
        .map_or(0, |d| d.inner.points.first().map_or(0, Vec::len))
}

/// Releases a dataset handle; null is ignored.
///
/// # Safety
/// `ds` must be null or a live dataset handle, not freed twice.
#[no_mangle]
pub unsafe extern "C" fn lipkit_dataset_free(ds: *mut LipkitDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

// ---------------------------------------------------------------------------
// Training.

/// Trains a scorer under the slope budget `lip_budget` and returns a model
/// handle, plus optionally the structured training report as JSON.
///
/// Inputs are min-max scaled to the unit box and the scaling is stored in
/// the model. Two distinct label values give one real-valued scorer, more
/// give one scorer per class. `config_json`, when non-null, is a full
/// training configuration as found in the `train.config` field of a
/// report; a positive `lip_budget` overrides the configured budget.
/// `kernel_json`, when non-null, is a kernel specification as found in
/// reports; the default is a Gaussian product kernel at the median
/// pairwise distance.
///
/// Returns [`LipkitStatus::NotConverged`] when the optimiser exhausts its
/// iterations; the model and report are still produced in that case.
///
/// # Safety
/// `ds` must be a live dataset handle, the strings null or NUL-terminated,
/// `out_model` a valid location for the handle, and `out_report_json` null
/// or a valid location for a string.
#[no_mangle]
pub unsafe extern "C" fn lipkit_train(
    ds: *const LipkitDataset,
    lip_budget: f64,
    config_json: *const c_char,
    kernel_json: *const c_char,
    out_model: *mut *mut LipkitModel,
    out_report_json: *mut *mut c_char,
) -> LipkitStatus {
    if ds.is_null() || out_model.is_null() {
        set_error("ds and out_model must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let data = &(*ds).inner;
        let classes = match distinct_labels(&data.labels) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let y_index = match indices_against(&data.labels, &classes) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let norm = Normalization::fit(&data.points);
        let points: Vec<Vec<f64>> = data
            .points
            .iter()
            .map(|p| {
                let mut q = p.clone();
                norm.apply(&mut q);
                q
            })
            .collect();
        let dim = points[0].len();

        let mut cfg = match opt_str(config_json) {
            Ok(Some(text)) => match serde_json::from_str::<TrainConfig>(text) {
                Ok(c) => c,
                Err(e) => {
                    set_error(&format!("training configuration: {e}"));
                    return LipkitStatus::BadFormat;
                }
            },
            Ok(None) => {
                if !(lip_budget.is_finite() && lip_budget > 0.0) {
                    return invalid("lip_budget must be positive when config_json is null");
                }
                let mut c = TrainConfig::new(lip_budget);
                if classes.len() > 2 {
                    c.loss = Loss::CrammerSinger;
                }
                c
            }
            Err(s) => return s,
        };
        if lip_budget.is_finite() && lip_budget > 0.0 {
            cfg.lip_budget = lip_budget;
        }

        let kernel = match opt_str(kernel_json) {
            Ok(Some(text)) => match serde_json::from_str::<KernelSpec>(text) {
                Ok(k) => k,
                Err(e) => {
                    set_error(&format!("kernel specification: {e}"));
                    return LipkitStatus::BadFormat;
                }
            },
            Ok(None) => {
                let sigma = match median_bandwidth(&points) {
                    Ok(s) => s,
                    Err(e) => return fail(&e),
                };
                KernelSpec::Product {
                    base: BaseKernel::Gaussian { sigma },
                    dim,
                }
            }
            Err(s) => return s,
        };

        let trained = if classes.len() == 2 {
            let y: Vec<f64> = y_index.iter().map(|&i| 2.0 * i as f64 - 1.0).collect();
            train_binary(&kernel, &points, &y, &cfg).map(|(m, rep)| (vec![m], rep))
        } else {
            train_multiclass(&kernel, &points, &y_index, &cfg)
        };
        let (models, report) = match trained {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };

        let bundle = match ModelBundle::new(models, norm, classes.clone()) {
            Ok(b) => b,
            Err(e) => return fail(&e),
        };
        let scorer = match make_scorer(&bundle) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let mut hits = 0usize;
        for (p, &yi) in points.iter().zip(&y_index) {
            match scorer.scores(p) {
                Ok(s) => hits += usize::from(argmax(&s) == yi),
                Err(e) => return fail(&e),
            }
        }
        let accuracy = hits as f64 / points.len() as f64;
        let converged = report.converged;

        if !out_report_json.is_null() {
            let payload = serde_json::json!({
                "kernel": kernel,
                "n_examples": points.len(),
                "dim": dim,
                "class_values": classes,
                "clean_accuracy": accuracy,
                "train": report,
            });
            let text = match serde_json::to_string_pretty(&payload) {
                Ok(t) => t,
                Err(e) => {
                    set_error(&format!("report serialization: {e}"));
                    return LipkitStatus::BadFormat;
                }
            };
            let status = give_string(out_report_json, text);
            if status != LipkitStatus::Ok {
                return status;
            }
        }
        ptr::write(
            out_model,
            Box::into_raw(Box::new(LipkitModel { inner: bundle })),
        );
        if converged {
            LipkitStatus::Ok
        } else {
            set_error("training finished without reaching its stop condition");
            LipkitStatus::NotConverged
        }
    })
}

// ---------------------------------------------------------------------------
// Models.

/// Serializes a model to its portable text form.
///
/// # Safety
/// `m` must be a live model handle and `out_text` a valid location for a
/// string.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_to_text(
    m: *const LipkitModel,
    out_text: *mut *mut c_char,
) -> LipkitStatus {
    if m.is_null() || out_text.is_null() {
        set_error("m and out_text must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| match (*m).inner.to_text() {
        Ok(t) => give_string(out_text, t),
        Err(e) => fail(&e),
    })
}

/// Rebuilds a model from its portable text form.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid location for
/// the handle.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_from_text(
    text: *const c_char,
    out: *mut *mut LipkitModel,
) -> LipkitStatus {
    if text.is_null() || out.is_null() {
        set_error("text and out must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let s = match opt_str(text) {
            Ok(s) => s.unwrap_or(""),
            Err(st) => return st,
        };
        match ModelBundle::from_text(s) {
            Ok(b) => {
                ptr::write(out, Box::into_raw(Box::new(LipkitModel { inner: b })));
                LipkitStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes a model to a file.
///
/// # Safety
/// `m` must be a live model handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_save(
    m: *const LipkitModel,
    path: *const c_char,
) -> LipkitStatus {
    if m.is_null() || path.is_null() {
        set_error("m and path must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let p = match opt_str(path) {
            Ok(s) => PathBuf::from(s.unwrap_or("")),
            Err(st) => return st,
        };
        match (*m).inner.save(&p) {
            Ok(()) => LipkitStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Reads a model from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid location for
/// the handle.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_load(
    path: *const c_char,
    out: *mut *mut LipkitModel,
) -> LipkitStatus {
    if path.is_null() || out.is_null() {
        set_error("path and out must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let p = match opt_str(path) {
            Ok(s) => PathBuf::from(s.unwrap_or("")),
            Err(st) => return st,
        };
        match ModelBundle::load(&p) {
            Ok(b) => {
                ptr::write(out, Box::into_raw(Box::new(LipkitModel { inner: b })));
                LipkitStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Input dimension the model expects, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_dim(m: *const LipkitModel) -> usize {
    m.as_ref().map_or(0, |h| h.inner.models[0].dim())
}

/// Number of classes the model scores, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_n_classes(m: *const LipkitModel) -> usize {
    m.as_ref().map_or(0, |h| h.inner.class_values.len())
}

/// Per-class scores for one raw (unscaled) input point; `out_scores` must
/// hold one double per class.
///
/// # Safety
/// `m` must be a live model handle, `x` must hold `dim` doubles matching
/// the model dimension, and `out_scores` must hold
/// [`lipkit_model_n_classes`] doubles.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_scores(
    m: *const LipkitModel,
    x: *const f64,
    dim: usize,
    out_scores: *mut f64,
) -> LipkitStatus {
    if m.is_null() || x.is_null() || out_scores.is_null() {
        set_error("m, x, and out_scores must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let bundle = &(*m).inner;
        if dim != bundle.models[0].dim() {
            return invalid("point dimension does not match the model");
        }
        let mut q = std::slice::from_raw_parts(x, dim).to_vec();
        bundle.normalization.apply(&mut q);
        let scorer = match make_scorer(bundle) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match scorer.scores(&q) {
            Ok(s) => {
                std::slice::from_raw_parts_mut(out_scores, s.len()).copy_from_slice(&s);
                LipkitStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Predicted raw label values for `n` raw input points.
///
/// # Safety
/// `m` must be a live model handle, `points` must hold `n * dim` doubles,
/// and `out_labels` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_predict(
    m: *const LipkitModel,
    points: *const f64,
    n: usize,
    dim: usize,
    out_labels: *mut f64,
) -> LipkitStatus {
    if m.is_null() || points.is_null() || out_labels.is_null() {
        set_error("m, points, and out_labels must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let bundle = &(*m).inner;
        if dim != bundle.models[0].dim() {
            return invalid("point dimension does not match the model");
        }
        let pts = match collect_points(points, n, dim) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let scorer = match make_scorer(bundle) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let out = std::slice::from_raw_parts_mut(out_labels, n);
        for (slot, p) in out.iter_mut().zip(&pts) {
            let mut q = p.clone();
            bundle.normalization.apply(&mut q);
            match scorer.scores(&q) {
                Ok(s) => *slot = bundle.class_values[argmax(&s)],
                Err(e) => return fail(&e),
            }
        }
        LipkitStatus::Ok
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `m` must be null or a live model handle, not freed twice.
#[no_mangle]
pub unsafe extern "C" fn lipkit_model_free(m: *mut LipkitModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

// ---------------------------------------------------------------------------
// Evaluation.

/// Projected-gradient robustness sweep of a model over a dataset whose
/// labels must all appear among the model's classes. Radii are attacked in
/// ascending order; `out_accuracy`, when non-null, receives one robust
/// accuracy per radius in that order, and `out_report_json`, when
/// non-null, receives the full report. `config_json`, when non-null, is an
/// attack configuration as found in reports; the default attacks the
/// Euclidean ball of the largest radius.
///
/// # Safety
/// `m` and `ds` must be live handles, `deltas` must hold `n_deltas`
/// doubles, `config_json` must be null or NUL-terminated,
/// `out_report_json` null or a valid location for a string, and
/// `out_accuracy` null or a location for `n_deltas` doubles.
#[no_mangle]
pub unsafe extern "C" fn lipkit_attack(
    m: *const LipkitModel,
    ds: *const LipkitDataset,
    deltas: *const f64,
    n_deltas: usize,
    config_json: *const c_char,
    out_report_json: *mut *mut c_char,
    out_accuracy: *mut f64,
) -> LipkitStatus {
    if m.is_null() || ds.is_null() || deltas.is_null() {
        set_error("m, ds, and deltas must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let bundle = &(*m).inner;
        let data = &(*ds).inner;
        if n_deltas == 0 {
            return invalid("need at least one radius");
        }
        let radii = std::slice::from_raw_parts(deltas, n_deltas);
        if radii.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("radii must be finite and nonnegative");
        }
        let labels = match indices_against(&data.labels, &bundle.class_values) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let points: Vec<Vec<f64>> = data
            .points
            .iter()
            .map(|p| {
                let mut q = p.clone();
                bundle.normalization.apply(&mut q);
                q
            })
            .collect();
        let cfg = match opt_str(config_json) {
            Ok(Some(text)) => match serde_json::from_str::<AttackConfig>(text) {
                Ok(c) => c,
                Err(e) => {
                    set_error(&format!("attack configuration: {e}"));
                    return LipkitStatus::BadFormat;
                }
            },
            Ok(None) => {
                let max_delta = radii.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
                AttackConfig::new(Norm::L2, max_delta)
            }
            Err(s) => return s,
        };
        let scorer = match make_scorer(bundle) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let report = match robust_accuracy(scorer.as_ref(), &points, &labels, radii, &cfg) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        if !out_accuracy.is_null() {
            let out = std::slice::from_raw_parts_mut(out_accuracy, report.rows.len());
            for (slot, row) in out.iter_mut().zip(&report.rows) {
                *slot = row.accuracy;
            }
        }
        if !out_report_json.is_null() {
            let text = match serde_json::to_string_pretty(&report) {
                Ok(t) => t,
                Err(e) => {
                    set_error(&format!("report serialization: {e}"));
                    return LipkitStatus::BadFormat;
                }
            };
            let status = give_string(out_report_json, text);
            if status != LipkitStatus::Ok {
                return status;
            }
        }
        LipkitStatus::Ok
    })
}

/// Runs the four numerical certification suites (`cases` instances each)
/// on the robust-risk oracles: convex equality, tent tightness, defect
/// bounds, and primal–dual agreement. Returns
/// [`LipkitStatus::CertifyFailed`] if any suite exceeds its tolerance;
/// `out_report_json`, when non-null, receives per-suite results either
/// way.
///
/// # Safety
/// `out_report_json` must be null or a valid location for a string.
#[no_mangle]
pub unsafe extern "C" fn lipkit_certify(
    cases: usize,
    seed: u64,
    out_report_json: *mut *mut c_char,
) -> LipkitStatus {
    guard(|| {
        if cases == 0 {
            return invalid("need at least one instance per suite");
        }
        let run = |f: &dyn Fn(u64) -> Result<f64, Error>| -> Result<f64, Error> {
            let mut worst = 0.0f64;
            for i in 0..cases {
                worst = worst.max(f(seed.wrapping_add(i as u64))?);
            }
            Ok(worst)
        };
        let suites: [(&str, f64, &dyn Fn(u64) -> Result<f64, Error>); 4] = [
            ("convex-equality", 1e-6, &|s| {
                let p = gen_convex_equality(s);
                let dual = robust_risk_dual(&p)?;
                let lip = lipschitz_on_grid(&p.points, &p.f, p.cost_scale);
                Ok((dual.value - (p.mean_loss() + p.radius * lip)).abs())
            }),
            ("tent-tightness", 1e-6, &|s| {
                let p = gen_tent(s);
                let g = gap_delta(&p)?;
                Ok((g.delta - p.radius * g.lip).abs())
            }),
            ("defect-bounds", 1e-9, &|s| {
                let even = s.wrapping_sub(seed) % 2 == 0;
                if even {
                    Ok(-gap_delta(&gen_random(s))?.delta)
                } else {
                    let g = gap_delta(&gen_gap_law(s))?;
                    Ok((-g.delta).max(g.delta - g.delta_bound))
                }
            }),
            ("primal-dual", 1e-6, &|s| {
                let p = gen_random(s);
                Ok((robust_risk_dual(&p)?.value - robust_risk_primal(&p)?.value).abs())
            }),
        ];
        let mut rows = Vec::with_capacity(4);
        let mut all_pass = true;
        for (name, tolerance, check) in suites {
            let worst = match run(check) {
                Ok(w) => w,
                Err(e) => return fail(&e),
            };
            let passed = worst <= tolerance;
            all_pass &= passed;
            rows.push(serde_json::json!({
                "name": name,
                "cases": cases,
                "worst": worst,
                "tolerance": tolerance,
                "passed": passed,
            }));
        }
        if !out_report_json.is_null() {
            let text = match serde_json::to_string_pretty(&serde_json::json!({
                "suites": rows,
                "all_pass": all_pass,
            })) {
                Ok(t) => t,
                Err(e) => {
                    set_error(&format!("report serialization: {e}"));
                    return LipkitStatus::BadFormat;
                }
            };
            let status = give_string(out_report_json, text);
            if status != LipkitStatus::Ok {
                return status;
            }
        }
        if all_pass {
            LipkitStatus::Ok
        } else {
            set_error("a certification suite exceeded its tolerance");
            LipkitStatus::CertifyFailed
        }
    })
}

/// Slope estimates for every scorer in the model by all applicable
/// methods, against the Euclidean gradient norm on the model's natural
/// box domain. `out_json` receives, per scorer, an array of
/// `{method, value, squared, n_witness}` records.
///
/// # Safety
/// `m` must be a live model handle and `out_json` a valid location for a
/// string.
#[no_mangle]
pub unsafe extern "C" fn lipkit_lipschitz_estimates(
    m: *const LipkitModel,
    n_witness: usize,
    restarts: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> LipkitStatus {
    if m.is_null() || out_json.is_null() {
        set_error("m and out_json must be non-null");
        return LipkitStatus::NullArgument;
    }
    guard(|| {
        let bundle = &(*m).inner;
        let dim = bundle.models[0].dim();
        let domain = match bundle.models[0].kernel {
            KernelSpec::Product { .. } => DomainBox::new(vec![0.0; dim], vec![1.0; dim]),
            KernelSpec::Inverse { .. } => {
                let half = 0.999 / (dim as f64).sqrt();
                DomainBox::new(vec![-half; dim], vec![half; dim])
            }
        };
        let domain = match domain {
            Ok(d) => d,
            Err(e) => return fail(&e),
        };
        let mut r = rng::stream(seed, 0x5A3D);
        let witnesses: Vec<Vec<f64>> = (0..n_witness)
            .map(|_| {
                (0..dim)
                    .map(|j| r.gen_range(domain.lo[j]..=domain.hi[j]))
                    .collect()
            })
            .collect();
        let mut per_model = Vec::with_capacity(bundle.models.len());
        for (idx, model) in bundle.models.iter().enumerate() {
            let ests = match estimate_all(
                model,
                &witnesses,
                &domain,
                DualNorm::L2,
                restarts,
                seed ^ ((idx as u64) << 8),
            ) {
                Ok(e) => e,
                Err(e) => return fail(&e),
            };
            per_model.push(ests);
        }
        match serde_json::to_string_pretty(&serde_json::json!({ "estimates": per_model })) {
            Ok(t) => give_string(out_json, t),
            Err(e) => {
                set_error(&format!("report serialization: {e}"));
                LipkitStatus::BadFormat
            }
        }
    })
}

// The status enum must stay exactly int-sized for the C signatures.
const _: [(); std::mem::size_of::<c_int>()] = [(); std::mem::size_of::<LipkitStatus>()];
