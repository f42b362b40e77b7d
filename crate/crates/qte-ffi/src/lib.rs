//! C ABI for the qte library: opaque handles, status codes, and a
//! thread-local last-error message. The generated header lands in
//! `include/qte.h` at build time.
//!
//! Handles returned by `*_new`/`*_load` functions are owned by the caller
//! and must be released with the matching `*_free`. All handles are
//! immutable after creation and safe to share across threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use qte::data::{validate, Design, StratifiedDataset, Stratum};
use qte::inference::{
    invert_confidence, test_quantile, InversionOptions, Method, NullSpec, QuantileReport,
};
use qte::scores::{RankScoreSpec, TiePolicy};
use qte::sensitivity::{
    finite_sample_pvalue, gamma_cutoff, gaussian_tail_pvalue, sensitivity_confidence, GammaCutoff,
    SensitivityTail,
};
use qte::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    BudgetExceeded = 4,
    WrongDesign = 5,
    ValidationFailed = 6,
    ParseError = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QteDesign {
    Scre = 0,
    MatchedSets = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QteMethod {
    Ilp = 0,
    Lp = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QteScore {
    Wilcoxon = 0,
    Stephenson = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QteTail {
    FiniteSample = 0,
    Gaussian = 1,
}

/// Outcome kind of the Gamma-cutoff search.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QteCutoffKind {
    BelowOne = 0,
    Value = 1,
    AboveCap = 2,
}

/// Analysis options shared by the p-value and confidence-set entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QteOptions {
    pub score: QteScore,
    /// Stephenson parameter; ignored for Wilcoxon scores.
    pub stephenson_h: u32,
    pub method: QteMethod,
    pub alpha: f64,
    /// Nonzero: Monte Carlo null with `mc_reps`/`mc_seed`; zero: exact
    /// enumeration capped by `exact_budget`.
    pub use_monte_carlo: u8,
    pub mc_reps: u64,
    pub mc_seed: u64,
    pub exact_budget: u64,
    /// Nonzero: permute unit order with `tie_seed` before analysis.
    pub use_tie_seed: u8,
    pub tie_seed: u64,
}

/// Opaque dataset handle.
pub struct QteDataset {
    inner: StratifiedDataset,
}

/// Opaque confidence-report handle.
pub struct QteReport {
    inner: QuantileReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(err: &Error) -> QteStatus {
    match err {
        Error::BudgetExceeded { .. } => QteStatus::BudgetExceeded,
        Error::WrongDesign(_) => QteStatus::WrongDesign,
        Error::InvalidDataset(_) => QteStatus::ValidationFailed,
        Error::Csv { .. } | Error::Config(_) => QteStatus::ParseError,
        Error::KOutOfRange { .. } => QteStatus::OutOfRange,
        Error::ShapeMismatch(_) | Error::InvalidArgument(_) => QteStatus::InvalidArgument,
        Error::Io(_) => QteStatus::ParseError,
    }
}

fn report_err(err: Error) -> QteStatus {
    set_error(&err.to_string());
    status_for(&err)
}

fn guard(body: impl FnOnce() -> QteStatus) -> QteStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            QteStatus::Panic
        }
    }
}

/// Version string of the underlying library; static storage.
#[no_mangle]
pub extern "C" fn qte_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent error on this thread. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qte_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Default options: Wilcoxon scores, exact ILP method, alpha 0.1, exact
/// null with the standard enumeration budget.
#[no_mangle]
pub extern "C" fn qte_options_default() -> QteOptions {
    QteOptions {
        score: QteScore::Wilcoxon,
        stephenson_h: 4,
        method: QteMethod::Ilp,
        alpha: 0.1,
        use_monte_carlo: 0,
        mc_reps: qte::nulldist::DEFAULT_MC_REPS,
        mc_seed: 0,
        exact_budget: 1_000_000,
        use_tie_seed: 0,
        tie_seed: 0,
    }
}

fn design_of(design: QteDesign) -> Design {
    match design {
        QteDesign::Scre => Design::Scre,
        QteDesign::MatchedSets => Design::MatchedSets,
    }
}

/// Loads a dataset from a CSV file with header `stratum,treated,outcome`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qte_dataset_load_csv(
    path: *const c_char,
    design: QteDesign,
    out: *mut *mut QteDataset,
) -> QteStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(p) => p,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return QteStatus::InvalidUtf8;
            }
        };
        match qte::csvio::ingest_csv(Path::new(path), design_of(design)) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(QteDataset { inner })) };
                QteStatus::Ok
            }
            Err(err) => report_err(err),
        }
    })
}

/// Builds a dataset from parallel arrays of length `len`: stratum labels
/// (strata ordered by first appearance), 0/1 treatment indicators, and
/// outcomes. Unit order within a stratum follows the array order.
///
/// # Safety
/// The three arrays must be readable for `len` elements; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qte_dataset_from_arrays(
    len: usize,
    stratum: *const u32,
    treated: *const u8,
    outcome: *const f64,
    design: QteDesign,
    out: *mut *mut QteDataset,
) -> QteStatus {
    guard(|| {
        if stratum.is_null() || treated.is_null() || outcome.is_null() || out.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        if len == 0 {
            set_error("empty dataset");
            return QteStatus::InvalidArgument;
        }
        let stratum = unsafe { std::slice::from_raw_parts(stratum, len) };
        let treated = unsafe { std::slice::from_raw_parts(treated, len) };
        let outcome = unsafe { std::slice::from_raw_parts(outcome, len) };
        let mut order: Vec<u32> = Vec::new();
        let mut groups: std::collections::HashMap<u32, (Vec<bool>, Vec<f64>)> =
            std::collections::HashMap::new();
        for i in 0..len {
            if treated[i] > 1 {
                set_error(&format!("treated[{i}] must be 0 or 1, got {}", treated[i]));
                return QteStatus::InvalidArgument;
            }
            let entry = groups.entry(stratum[i]).or_insert_with(|| {
                order.push(stratum[i]);
                (Vec::new(), Vec::new())
            });
            entry.0.push(treated[i] == 1);
            entry.1.push(outcome[i]);
        }
        let strata: Vec<Stratum> = order
            .into_iter()
            .map(|key| {
                let (z, y) = groups.remove(&key).expect("key recorded");
                Stratum::new(z, y).expect("parallel arrays have equal length")
            })
            .collect();
        let inner = StratifiedDataset::new(strata, design_of(design));
        unsafe { *out = Box::into_raw(Box::new(QteDataset { inner })) };
        QteStatus::Ok
    })
}

/// # Safety
/// `dataset` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qte_dataset_free(dataset: *mut QteDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// # Safety
/// `dataset` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn qte_dataset_units(dataset: *const QteDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }.inner.total_units()
}

/// # Safety
/// `dataset` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn qte_dataset_strata(dataset: *const QteDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }.inner.num_strata()
}

/// Checks the dataset invariants; on failure the findings are in
/// `qte_last_error`.
///
/// # Safety
/// `dataset` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn qte_dataset_validate(dataset: *const QteDataset) -> QteStatus {
    guard(|| {
        if dataset.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        let report = validate(&unsafe { &*dataset }.inner);
        if report.is_valid() {
            QteStatus::Ok
        } else {
            set_error(&report.to_message());
            QteStatus::ValidationFailed
        }
    })
}

fn score_spec(options: &QteOptions) -> Result<RankScoreSpec, Error> {
    match options.score {
        QteScore::Wilcoxon => Ok(RankScoreSpec::wilcoxon()),
        QteScore::Stephenson => RankScoreSpec::stephenson(options.stephenson_h),
    }
}

fn null_spec(options: &QteOptions) -> NullSpec {
    if options.use_monte_carlo != 0 {
        NullSpec::MonteCarlo {
            reps: options.mc_reps,
            seed: options.mc_seed,
        }
    } else {
        NullSpec::Exact {
            budget: options.exact_budget as u128,
        }
    }
}

fn method_of(method: QteMethod) -> Method {
    match method {
        QteMethod::Ilp => Method::IlpExact,
        QteMethod::Lp => Method::LpConservative,
    }
}

fn prepared_dataset(dataset: &QteDataset, options: &QteOptions) -> StratifiedDataset {
    if options.use_tie_seed != 0 {
        qte::data::permute_units(&dataset.inner, options.tie_seed)
    } else {
        dataset.inner.clone()
    }
}

/// Randomization p-value for the null "k-th smallest effect <= c".
///
/// # Safety
/// `dataset` and `out_p` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qte_scre_pvalue(
    dataset: *const QteDataset,
    options: QteOptions,
    k: usize,
    c: f64,
    out_p: *mut f64,
) -> QteStatus {
    guard(|| {
        if dataset.is_null() || out_p.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        let data = prepared_dataset(unsafe { &*dataset }, &options);
        let result = (|| {
            let spec = score_spec(&options)?;
            let null = null_spec(&options).build(&data, &spec)?;
            test_quantile(
                &data,
                &spec,
                TiePolicy::FirstByUnitOrder,
                k,
                c,
                &null,
                method_of(options.method),
            )
        })();
        match result {
            Ok(p) => {
                unsafe { *out_p = p };
                QteStatus::Ok
            }
            Err(err) => report_err(err),
        }
    })
}

/// Simultaneous lower confidence limits for every effect quantile under the
/// stratified randomized design.
///
/// # Safety
/// `dataset` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qte_scre_confidence(
    dataset: *const QteDataset,
    options: QteOptions,
    out: *mut *mut QteReport,
) -> QteStatus {
    guard(|| {
        if dataset.is_null() || out.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        let data = prepared_dataset(unsafe { &*dataset }, &options);
        let result = (|| {
            let spec = score_spec(&options)?;
            let null = null_spec(&options).build(&data, &spec)?;
            invert_confidence(
                &data,
                &spec,
                TiePolicy::FirstByUnitOrder,
                options.alpha,
                &null,
                method_of(options.method),
                &InversionOptions::default(),
            )
        })();
        match result {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(QteReport { inner })) };
                QteStatus::Ok
            }
            Err(err) => report_err(err),
        }
    })
}

/// Worst-case sensitivity p-value at bias `gamma`.
///
/// # Safety
/// `dataset` and `out_p` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qte_sensitivity_pvalue(
    dataset: *const QteDataset,
    options: QteOptions,
    gamma: f64,
    tail: QteTail,
    k: usize,
    c: f64,
    out_p: *mut f64,
) -> QteStatus {
    guard(|| {
        if dataset.is_null() || out_p.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        let data = prepared_dataset(unsafe { &*dataset }, &options);
        let result = (|| {
            let spec = score_spec(&options)?;
            match tail {
                QteTail::FiniteSample => {
                    finite_sample_pvalue(&data, &spec, gamma, k, c, method_of(options.method))
                }
                QteTail::Gaussian => {
                    gaussian_tail_pvalue(&data, &spec, gamma, k, c, method_of(options.method))
                }
            }
        })();
        match result {
            Ok(p) => {
                unsafe { *out_p = p };
                QteStatus::Ok
            }
            Err(err) => report_err(err),
        }
    })
}

/// Simultaneous sensitivity confidence limits at bias `gamma`.
///
/// # Safety
/// `dataset` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qte_sensitivity_confidence(
    dataset: *const QteDataset,
    options: QteOptions,
    gamma: f64,
    tail: QteTail,
    out: *mut *mut QteReport,
) -> QteStatus {
    guard(|| {
        if dataset.is_null() || out.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        let data = prepared_dataset(unsafe { &*dataset }, &options);
        let result = (|| {
            let spec = score_spec(&options)?;
            let tail = match tail {
                QteTail::FiniteSample => SensitivityTail::FiniteSample,
                QteTail::Gaussian => SensitivityTail::Gaussian,
            };
            sensitivity_confidence(
                &data,
                &spec,
                options.alpha,
                gamma,
                tail,
                method_of(options.method),
                &InversionOptions::default(),
            )
        })();
        match result {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(QteReport { inner })) };
                QteStatus::Ok
            }
            Err(err) => report_err(err),
        }
    })
}

/// Largest bias at which the (k, c) test still rejects; `out_kind`
/// discriminates below-1 / finite value / above the search cap.
///
/// # Safety
/// `dataset`, `out_kind`, and `out_gamma` must be valid pointers.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn qte_gamma_cutoff(
    dataset: *const QteDataset,
    options: QteOptions,
    k: usize,
    c: f64,
    tail: QteTail,
    resolution: f64,
    out_kind: *mut QteCutoffKind,
    out_gamma: *mut f64,
) -> QteStatus {
    guard(|| {
        if dataset.is_null() || out_kind.is_null() || out_gamma.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        let data = prepared_dataset(unsafe { &*dataset }, &options);
        let result = (|| {
            let spec = score_spec(&options)?;
            let tail = match tail {
                QteTail::FiniteSample => SensitivityTail::FiniteSample,
                QteTail::Gaussian => SensitivityTail::Gaussian,
            };
            gamma_cutoff(
                &data,
                &spec,
                options.alpha,
                k,
                c,
                tail,
                method_of(options.method),
                resolution,
            )
        })();
        match result {
            Ok(cutoff) => {
                let (kind, gamma) = match cutoff {
                    GammaCutoff::BelowOne => (QteCutoffKind::BelowOne, 1.0),
                    GammaCutoff::Value(g) => (QteCutoffKind::Value, g),
                    GammaCutoff::AboveCap(cap) => (QteCutoffKind::AboveCap, cap),
                };
                unsafe {
                    *out_kind = kind;
                    *out_gamma = gamma;
                }
                QteStatus::Ok
            }
            Err(err) => report_err(err),
        }
    })
}

/// Number of quantile rows in a report.
///
/// # Safety
/// `report` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn qte_report_len(report: *const QteReport) -> usize {
    if report.is_null() {
        return 0;
    }
    unsafe { &*report }.inner.limits.len()
}

/// Reads row `index`: the quantile rank, its lower confidence limit
/// (-inf when uninformative), and whether the boundary is attained under
/// the order-free default p-value.
///
/// # Safety
/// `report` must be a valid handle and the out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn qte_report_limit(
    report: *const QteReport,
    index: usize,
    out_k: *mut usize,
    out_lower: *mut f64,
    out_included: *mut u8,
) -> QteStatus {
    guard(|| {
        if report.is_null() || out_k.is_null() || out_lower.is_null() || out_included.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        let report = unsafe { &*report };
        let Some(row) = report.inner.limits.get(index) else {
            set_error(&format!(
                "index {index} out of range for {} rows",
                report.inner.limits.len()
            ));
            return QteStatus::OutOfRange;
        };
        unsafe {
            *out_k = row.k;
            *out_lower = row.lower;
            *out_included = row.included_upper_p as u8;
        }
        QteStatus::Ok
    })
}

/// Serializes the full report as JSON; free with `qte_string_free`.
///
/// # Safety
/// `report` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qte_report_to_json(
    report: *const QteReport,
    out: *mut *mut c_char,
) -> QteStatus {
    guard(|| {
        if report.is_null() || out.is_null() {
            set_error("null pointer argument");
            return QteStatus::NullPointer;
        }
        match serde_json::to_string(&unsafe { &*report }.inner) {
            Ok(json) => {
                let c = CString::new(json).unwrap_or_default();
                unsafe { *out = c.into_raw() };
                QteStatus::Ok
            }
            Err(err) => {
                set_error(&err.to_string());
                QteStatus::Panic
            }
        }
    })
}

/// # Safety
/// `report` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn qte_report_free(report: *mut QteReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// # Safety
/// `s` must come from `qte_report_to_json` or be null.
#[no_mangle]
pub unsafe extern "C" fn qte_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
