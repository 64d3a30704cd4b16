//! C ABI for the hetcp conformal prediction library.
//!
//! Conventions:
//! - Datasets and predictors are opaque handles created and destroyed here;
//!   never free them with anything but the matching `*_free` function.
//! - Every fallible call returns a [`HetcpStatus`]; on failure a thread-local
//!   message is readable through [`hetcp_last_error_message`].
//! - Strings returned through out-pointers are heap-allocated C strings owned
//!   by the caller; release them with [`hetcp_string_free`].
//!
//! The matching header is generated into `include/hetcp.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use serde::Deserialize;

use hetcp::conformal::{calibrate, calibrate_mondrian};
use hetcp::data::SplitSpec;
use hetcp::error::Error;
use hetcp::estimators::EstimatorSpec;
use hetcp::metrics::evaluate;
use hetcp::nonconformity::Measure;
use hetcp::rng::RngStream;
use hetcp::synthetic::GeneratorSpec;
use hetcp::taxonomy::TaxonomySpec;
use hetcp::{CalibratedPredictor, Dataset, Observation};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HetcpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Configuration was syntactically or semantically invalid.
    InvalidArgument = 2,
    /// The data was unusable (empty, non-finite, dimension mismatch, ...).
    DataError = 3,
    /// A path or string was not valid UTF-8.
    Utf8Error = 4,
    /// File I/O failed.
    IoError = 5,
    /// A panic was caught at the boundary.
    InternalError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn status_of(err: &Error) -> HetcpStatus {
    match err {
        Error::InvalidAlpha { .. }
        | Error::InvalidFraction { .. }
        | Error::InvalidParameter(_)
        | Error::InvalidQuantileLevel { .. }
        | Error::Json(_)
        | Error::DiagnosticOnly
        | Error::MeasureMismatch { .. } => HetcpStatus::InvalidArgument,
        Error::Io(_) => HetcpStatus::IoError,
        _ => HetcpStatus::DataError,
    }
}

fn fail(err: Error) -> HetcpStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Runs a closure, translating panics into `InternalError`.
fn guarded(f: impl FnOnce() -> HetcpStatus) -> HetcpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            HetcpStatus::InternalError
        }
    }
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, HetcpStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(HetcpStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        HetcpStatus::Utf8Error
    })
}

/// Opaque dataset handle.
pub struct HetcpDataset {
    inner: Dataset,
}

/// Opaque calibrated-predictor handle.
pub struct HetcpPredictor {
    inner: CalibratedPredictor,
    seed: u64,
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hetcp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string returned through an out-pointer.
///
/// # Safety
/// `s` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn hetcp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset from a CSV file with header `x0,..,x{d-1},y` (optional
/// `mu,sigma` columns are ignored).
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hetcp_dataset_from_csv(
    path: *const c_char,
    out: *mut *mut HetcpDataset,
) -> HetcpStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return HetcpStatus::NullArgument;
        }
        let path = match cstr(path) {
            Ok(p) => PathBuf::from(p),
            Err(status) => return status,
        };
        match hetcp::read_csv(&path) {
            Ok((dataset, _)) => {
                *out = Box::into_raw(Box::new(HetcpDataset { inner: dataset }));
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Builds a dataset from row-major features `xs` (n * dim values) and `ys`
/// (n values).
///
/// # Safety
/// `xs` must point to `n * dim` doubles, `ys` to `n` doubles, `out` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn hetcp_dataset_from_arrays(
    xs: *const f64,
    n: usize,
    dim: usize,
    ys: *const f64,
    out: *mut *mut HetcpDataset,
) -> HetcpStatus {
    guarded(|| {
        if xs.is_null() || ys.is_null() || out.is_null() {
            set_error("null array argument");
            return HetcpStatus::NullArgument;
        }
        let xs = std::slice::from_raw_parts(xs, n * dim);
        let ys = std::slice::from_raw_parts(ys, n);
        let observations: Vec<Observation> = (0..n)
            .map(|i| Observation {
                x: xs[i * dim..(i + 1) * dim].to_vec(),
                y: ys[i],
            })
            .collect();
        match Dataset::new(observations) {
            Ok(dataset) => {
                *out = Box::into_raw(Box::new(HetcpDataset { inner: dataset }));
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Samples a synthetic dataset from a generator configuration such as
/// `{"type":"toy_cv","dim":2,"n":500,"seed":7}`.
///
/// # Safety
/// `generator_json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hetcp_synth(
    generator_json: *const c_char,
    out: *mut *mut HetcpDataset,
) -> HetcpStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return HetcpStatus::NullArgument;
        }
        let json = match cstr(generator_json) {
            Ok(j) => j,
            Err(status) => return status,
        };
        let spec: GeneratorSpec = match serde_json::from_str(json) {
            Ok(spec) => spec,
            Err(err) => return fail(err.into()),
        };
        let result = spec.build().and_then(|generator| generator.generate());
        match result {
            Ok((dataset, _)) => {
                *out = Box::into_raw(Box::new(HetcpDataset { inner: dataset }));
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Number of observations.
///
/// # Safety
/// `dataset` must be a live handle from this library (or null, giving 0).
#[no_mangle]
pub unsafe extern "C" fn hetcp_dataset_len(dataset: *const HetcpDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.len()
}

/// Feature dimensionality.
///
/// # Safety
/// `dataset` must be a live handle from this library (or null, giving 0).
#[no_mangle]
pub unsafe extern "C" fn hetcp_dataset_dim(dataset: *const HetcpDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.dim()
}

/// Splits a dataset into train/calibration/test parts (fractions strictly
/// inside (0,1); the calibration fraction applies to the non-test remainder).
///
/// # Safety
/// All pointers must be valid; the three out-pointers receive new handles.
#[no_mangle]
pub unsafe extern "C" fn hetcp_dataset_split(
    dataset: *const HetcpDataset,
    test_fraction: f64,
    calib_fraction_of_train: f64,
    seed: u64,
    out_train: *mut *mut HetcpDataset,
    out_calib: *mut *mut HetcpDataset,
    out_test: *mut *mut HetcpDataset,
) -> HetcpStatus {
    guarded(|| {
        if dataset.is_null() || out_train.is_null() || out_calib.is_null() || out_test.is_null() {
            set_error("null argument");
            return HetcpStatus::NullArgument;
        }
        let spec = SplitSpec::new(test_fraction, calib_fraction_of_train, seed);
        match (*dataset).inner.split(&spec) {
            Ok((train, calib, test)) => {
                *out_train = Box::into_raw(Box::new(HetcpDataset { inner: train }));
                *out_calib = Box::into_raw(Box::new(HetcpDataset { inner: calib }));
                *out_test = Box::into_raw(Box::new(HetcpDataset { inner: test }));
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Releases a dataset handle.
///
/// # Safety
/// `dataset` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hetcp_dataset_free(dataset: *mut HetcpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

#[derive(Debug, Default, Deserialize)]
struct CalibrateConfig {
    measure: Option<String>,
    epsilon: Option<f64>,
    alpha: Option<f64>,
    estimator: Option<EstimatorSpec>,
    taxonomy: Option<TaxonomySpec>,
    mondrian: Option<bool>,
    seed: Option<u64>,
    generator: Option<GeneratorSpec>,
}

/// Fits an estimator on `train` and calibrates a conformal predictor on
/// `calib`.
///
/// `config_json` example:
/// `{"measure":"norm","alpha":0.1,"estimator":{"kind":"knn","k":50},
///   "taxonomy":{"kind":"difficulty_bins","n_bins":3},"mondrian":true,"seed":1}`.
/// Oracle estimators additionally need a `generator` entry.
///
/// # Safety
/// All pointers must be valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn hetcp_calibrate(
    train: *const HetcpDataset,
    calib: *const HetcpDataset,
    config_json: *const c_char,
    out: *mut *mut HetcpPredictor,
) -> HetcpStatus {
    guarded(|| {
        if train.is_null() || calib.is_null() || out.is_null() {
            set_error("null argument");
            return HetcpStatus::NullArgument;
        }
        let json = match cstr(config_json) {
            Ok(j) => j,
            Err(status) => return status,
        };
        let config: CalibrateConfig = match serde_json::from_str(json) {
            Ok(config) => config,
            Err(err) => return fail(err.into()),
        };
        match calibrate_impl(&(*train).inner, &(*calib).inner, config) {
            Ok(predictor) => {
                *out = Box::into_raw(Box::new(predictor));
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

fn calibrate_impl(
    train: &Dataset,
    calib: &Dataset,
    config: CalibrateConfig,
) -> Result<HetcpPredictor, Error> {
    let seed = config.seed.unwrap_or(0);
    let alpha = config.alpha.unwrap_or(0.1);
    let generator = config.generator.as_ref().map(|s| s.build()).transpose()?;
    let estimator_spec = config.estimator.clone().unwrap_or_else(|| {
        if generator.is_some() {
            EstimatorSpec::oracle()
        } else {
            EstimatorSpec::knn(50)
        }
    });
    let estimator = estimator_spec.fit(Some(train), generator.as_ref())?;
    let measure = {
        let name = config.measure.as_deref().unwrap_or("norm");
        let base = Measure::parse(name)?;
        match (base, config.epsilon) {
            (Measure::Normalized { .. }, Some(e)) => Measure::Normalized { epsilon: e },
            (Measure::Standardized { .. }, Some(e)) => Measure::Standardized { epsilon: e },
            (m, _) => m,
        }
    };
    let taxonomy_spec = config
        .taxonomy
        .clone()
        .unwrap_or(TaxonomySpec::DifficultyBins { n_bins: 3 });
    let noise = RngStream::new(seed, 0xCA);
    let sigma_hats: Vec<f64> = estimator
        .predict_dataset(calib, &noise)?
        .iter()
        .map(|e| e.sigma)
        .collect();
    let taxonomy = taxonomy_spec.fit(&sigma_hats)?;
    let predictor = if config.mondrian.unwrap_or(false) {
        calibrate_mondrian(measure, estimator, calib, alpha, taxonomy, &noise)?
    } else {
        calibrate(measure, estimator, calib, alpha, Some(taxonomy), &noise)?
    };
    Ok(HetcpPredictor {
        inner: predictor,
        seed,
    })
}

/// Prediction interval at a feature point; infinite endpoints are delivered
/// as IEEE infinities.
///
/// # Safety
/// `x` must point to `dim` doubles; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hetcp_predict(
    predictor: *const HetcpPredictor,
    x: *const f64,
    dim: usize,
    point_id: u64,
    out_lower: *mut f64,
    out_upper: *mut f64,
) -> HetcpStatus {
    guarded(|| {
        if predictor.is_null() || x.is_null() || out_lower.is_null() || out_upper.is_null() {
            set_error("null argument");
            return HetcpStatus::NullArgument;
        }
        let handle = &*predictor;
        let features = std::slice::from_raw_parts(x, dim);
        let mut noise = RngStream::new(handle.seed, 0xE7).substream(point_id);
        match handle.inner.predict(features, &mut noise) {
            Ok(interval) => {
                *out_lower = interval.lower();
                *out_upper = interval.upper();
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Evaluates the predictor on a test dataset and returns the report as JSON
/// (marginal and per-class coverage/width).
///
/// # Safety
/// Pointers must be valid; the string out-pointer receives a new allocation.
#[no_mangle]
pub unsafe extern "C" fn hetcp_evaluate_json(
    predictor: *const HetcpPredictor,
    test: *const HetcpDataset,
    out_json: *mut *mut c_char,
) -> HetcpStatus {
    guarded(|| {
        if predictor.is_null() || test.is_null() || out_json.is_null() {
            set_error("null argument");
            return HetcpStatus::NullArgument;
        }
        let handle = &*predictor;
        let Some(taxonomy) = handle.inner.taxonomy().cloned() else {
            set_error("predictor has no taxonomy; conditional evaluation needs one");
            return HetcpStatus::InvalidArgument;
        };
        let noise = RngStream::new(handle.seed, 0xE7);
        let result = evaluate(&handle.inner, &(*test).inner, &taxonomy, &noise)
            .and_then(|report| Ok(serde_json::to_string(&report)?));
        match result {
            Ok(json) => {
                *out_json = CString::new(json).unwrap().into_raw();
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Serializes the predictor (critical scores, taxonomy, fitted estimator) to
/// JSON; enough to re-run prediction without the calibration data.
///
/// # Safety
/// Pointers must be valid; the string out-pointer receives a new allocation.
#[no_mangle]
pub unsafe extern "C" fn hetcp_predictor_to_json(
    predictor: *const HetcpPredictor,
    out_json: *mut *mut c_char,
) -> HetcpStatus {
    guarded(|| {
        if predictor.is_null() || out_json.is_null() {
            set_error("null argument");
            return HetcpStatus::NullArgument;
        }
        match (*predictor).inner.to_json() {
            Ok(json) => {
                *out_json = CString::new(json).unwrap().into_raw();
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Restores a predictor from its JSON serialization.
///
/// # Safety
/// `json` must be a valid C string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hetcp_predictor_from_json(
    json: *const c_char,
    seed: u64,
    out: *mut *mut HetcpPredictor,
) -> HetcpStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return HetcpStatus::NullArgument;
        }
        let json = match cstr(json) {
            Ok(j) => j,
            Err(status) => return status,
        };
        match CalibratedPredictor::from_json(json) {
            Ok(predictor) => {
                *out = Box::into_raw(Box::new(HetcpPredictor {
                    inner: predictor,
                    seed,
                }));
                HetcpStatus::Ok
            }
            Err(err) => fail(err),
        }
    })
}

/// Releases a predictor handle.
///
/// # Safety
/// `predictor` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hetcp_predictor_free(predictor: *mut HetcpPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}
