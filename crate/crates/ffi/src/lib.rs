//! C interface to `acte`: opaque dataset and model handles, status codes and
//! a per-thread error message.
//!
//! Every function returns an [`ActeStatus`]. On failure the message of the
//! most recent error on the calling thread is available from
//! [`acte_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use acte::dataset::{ingest_csv, preprocess, IngestSpec};
use acte::inference::bootstrap_model_curves;
use acte::simlab::{generate, ScenarioSpec};
use acte::{
    fit_meta, ActeError, BootstrapConfig, CovariateSchema, CurveKind, Dataset, FittedMeta, MetaLearner, MetaSpec,
    PreprocessConfig, RegressorSpec, ResampleUnit, RfHyperparams,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Input = 3,
    Config = 4,
    Domain = 5,
    DegenerateArm = 6,
    BufferTooSmall = 7,
    Serialization = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActeLearner {
    S = 0,
    T = 1,
    X = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActeBase {
    Ols = 0,
    Rf = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActeCurve {
    Effect = 0,
    ControlMean = 1,
    TreatedMean = 2,
}

/// Opaque handle to a validated panel.
pub struct ActeDataset {
    inner: Dataset,
}

/// Opaque handle to a fitted meta-learner.
pub struct ActeModel {
    inner: FittedMeta,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(ActeStatus, String);

impl From<ActeError> for Failure {
    fn from(e: ActeError) -> Self {
        let status = match &e {
            ActeError::Schema(_)
            | ActeError::Parse { .. }
            | ActeError::EmptyInput(_)
            | ActeError::EmptyResult(_)
            | ActeError::Chronology { .. }
            | ActeError::Encoding { .. }
            | ActeError::InsufficientData(_) => ActeStatus::Input,
            ActeError::Domain(_) | ActeError::PropensityMissing(_) | ActeError::Alignment(_) => ActeStatus::Domain,
            ActeError::DegenerateArm(_) | ActeError::ReplicateFailure { .. } => ActeStatus::DegenerateArm,
            ActeError::Config(_) => ActeStatus::Config,
            ActeError::Serialization(_) => ActeStatus::Serialization,
            ActeError::Dependency(_) | ActeError::Io { .. } => ActeStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ActeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ActeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ActeStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ActeStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ActeStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn age_grid(age_min: i32, age_max: i32) -> Result<Vec<i32>, Failure> {
    if age_min > age_max {
        return Err(Failure(ActeStatus::Config, format!("empty age grid {age_min}:{age_max}")));
    }
    Ok((age_min..=age_max).collect())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn acte_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn acte_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads and preprocesses a box-score CSV.
///
/// `covariates` is a `name:kind` list such as `"team:categorical"` and may be
/// NULL. A negative `min_prev_minutes` selects the default of 25.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acte_dataset_read_csv(
    path: *const c_char,
    covariates: *const c_char,
    outcome: *const c_char,
    min_prev_minutes: f64,
    age_min: i32,
    age_max: i32,
    out: *mut *mut ActeDataset,
) -> ActeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = text(path, "path")?;
        let outcome = text(outcome, "outcome")?;
        let schema = CovariateSchema::parse(opt_text(covariates, "covariates")?.unwrap_or(""))?;
        let mut pre = PreprocessConfig {
            age_min,
            age_max,
            ..Default::default()
        };
        if min_prev_minutes >= 0.0 {
            pre.min_prev_minutes = min_prev_minutes;
        }
        let spec = IngestSpec {
            covariates: schema,
            outcomes: vec![outcome.to_string()],
            rest_threshold_days: pre.rest_threshold_days,
        };
        let ds = preprocess(&ingest_csv(path, &spec)?, &pre)?;
        *out = Box::into_raw(Box::new(ActeDataset { inner: ds }));
        Ok(())
    })
}

/// Generates one simulated panel for `scenario` (1, 2 or 3).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acte_dataset_simulate(
    scenario: u8,
    n_players: usize,
    seed: u64,
    out: *mut *mut ActeDataset,
) -> ActeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = ScenarioSpec {
            n_players,
            seed,
            ..ScenarioSpec::new(scenario)?
        };
        let sim = generate(&spec)?;
        *out = Box::into_raw(Box::new(ActeDataset { inner: sim.data }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `out_rows` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acte_dataset_rows(ds: *const ActeDataset, out_rows: *mut usize) -> ActeStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out_rows.is_null() {
            return Err(null("out_rows"));
        }
        *out_rows = ds.inner.len();
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acte_dataset_free(ds: *mut ActeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits a meta-learner. `n_trees` and `seed` only affect the forest base.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acte_model_fit(
    ds: *const ActeDataset,
    learner: ActeLearner,
    base: ActeBase,
    n_trees: usize,
    seed: u64,
    out: *mut *mut ActeModel,
) -> ActeStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let learner = match learner {
            ActeLearner::S => MetaLearner::S,
            ActeLearner::T => MetaLearner::T,
            ActeLearner::X => MetaLearner::X,
        };
        let base = match base {
            ActeBase::Ols => RegressorSpec::ols(),
            ActeBase::Rf => {
                let rf = RfHyperparams {
                    n_trees,
                    seed,
                    ..Default::default()
                };
                rf.validate()?;
                RegressorSpec::rf(rf)
            }
        };
        let model = fit_meta(&ds.inner, &MetaSpec::new(learner, base))?;
        *out = Box::into_raw(Box::new(ActeModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acte_model_free(model: *mut ActeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn curve_kind(c: ActeCurve) -> CurveKind {
    match c {
        ActeCurve::Effect => CurveKind::Acte,
        ActeCurve::ControlMean => CurveKind::AcefControl,
        ActeCurve::TreatedMean => CurveKind::AcefTreated,
    }
}

unsafe fn check_buffer(buf: *mut f64, len: usize, need: usize, what: &str) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Failure(
            ActeStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(())
}

/// Writes the requested curve at ages `age_min..=age_max` into `values`,
/// which must hold at least `age_max - age_min + 1` doubles.
///
/// # Safety
/// Handles must be live; `values` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn acte_model_curve(
    model: *const ActeModel,
    ds: *const ActeDataset,
    curve: ActeCurve,
    age_min: i32,
    age_max: i32,
    values: *mut f64,
    len: usize,
) -> ActeStatus {
    guard(|| {
        let model = &handle(model, "model")?.inner;
        let ds = &handle(ds, "dataset")?.inner;
        let ages = age_grid(age_min, age_max)?;
        check_buffer(values, len, ages.len(), "values")?;
        let c = match curve_kind(curve) {
            CurveKind::Acte => model.acte(ds, &ages)?,
            CurveKind::AcefControl => model.acef(ds, 0, &ages)?,
            CurveKind::AcefTreated => model.acef(ds, 1, &ages)?,
        };
        ptr::copy_nonoverlapping(c.values.as_ptr(), values, ages.len());
        Ok(())
    })
}

/// Effect curve with percentile bootstrap bands at level `1 - alpha`.
///
/// # Safety
/// Handles must be live; each buffer must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn acte_model_bootstrap(
    model: *const ActeModel,
    ds: *const ActeDataset,
    age_min: i32,
    age_max: i32,
    replicates: usize,
    alpha: f64,
    seed: u64,
    values: *mut f64,
    lower: *mut f64,
    upper: *mut f64,
    len: usize,
) -> ActeStatus {
    guard(|| {
        let model = &handle(model, "model")?.inner;
        let ds = &handle(ds, "dataset")?.inner;
        let ages = age_grid(age_min, age_max)?;
        for (buf, what) in [(values, "values"), (lower, "lower"), (upper, "upper")] {
            check_buffer(buf, len, ages.len(), what)?;
        }
        let cfg = BootstrapConfig {
            replicates,
            alpha,
            resample_unit: ResampleUnit::Row,
            seed,
        };
        let c = bootstrap_model_curves(model, ds, &ages, &cfg, &[CurveKind::Acte])?.remove(0);
        let (lo, hi) = (c.lower.unwrap_or_default(), c.upper.unwrap_or_default());
        ptr::copy_nonoverlapping(c.values.as_ptr(), values, ages.len());
        ptr::copy_nonoverlapping(lo.as_ptr(), lower, ages.len());
        ptr::copy_nonoverlapping(hi.as_ptr(), upper, ages.len());
        Ok(())
    })
}

/// Serializes a model to JSON. Release the string with [`acte_string_free`].
///
/// # Safety
/// `model` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acte_model_to_json(model: *const ActeModel, out: *mut *mut c_char) -> ActeStatus {
    guard(|| {
        let model = &handle(model, "model")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = model.to_json()?;
        *out = CString::new(json)
            .map_err(|e| Failure(ActeStatus::Serialization, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acte_model_from_json(json: *const c_char, out: *mut *mut ActeModel) -> ActeStatus {
    guard(|| {
        let json = text(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = FittedMeta::from_json(json)?;
        *out = Box::into_raw(Box::new(ActeModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acte_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
