//! C ABI over the `modelrisk` engine.
//!
//! Objects cross the boundary as opaque handles created by `mr_*_new`-style
//! constructors and released with the matching `mr_*_free`. Every fallible
//! call returns an [`MrStatus`]; on failure a description is available from
//! [`mr_last_error_message`] on the same thread. Strings returned through
//! `char **` out-parameters are owned by the caller and must be released with
//! [`mr_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use modelrisk::costmodel::expected_failure_cost;
use modelrisk::decision::{break_even_between, parse_anomaly_profile, risk_table, BreakEvenRegime, FailureCostTreatment};
use modelrisk::reliability::{fit_posterior, marginal_density_summary, posterior_mean};
use modelrisk::voi::{vopi, VopiSettings};
use modelrisk::{ConfusionMatrix, CostConfig, Error, ReliabilityPosterior, Strategy, StrategyRiskTable};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IoError = 4,
    NumericalError = 5,
    Panic = 6,
}

/// Which side of the break-even prevalence favours the challenger.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrRegime {
    ChallengerAbove = 0,
    ChallengerBelow = 1,
    ChallengerAlways = 2,
    BaselineAlways = 3,
    Identical = 4,
}

/// Dirichlet posterior over a classifier's confusion matrix.
pub struct MrPosterior(ReliabilityPosterior);

/// Cost configuration.
pub struct MrCosts(CostConfig);

/// Expected cost per scenario and strategy.
pub struct MrRiskTable(StrategyRiskTable);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(MrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Parse { .. } => MrStatus::ParseError,
            Error::Io { .. } => MrStatus::IoError,
            Error::Numerical(_) => MrStatus::NumericalError,
            _ => MrStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(MrStatus::NullPointer, format!("`{name}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MrStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("internal panic: {msg}"));
            MrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains an interior NUL"))
}

unsafe fn write_slice(out: *mut f64, len: usize, values: impl ExactSizeIterator<Item = f64>) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < values.len() {
        return Err(invalid(format!("buffer holds {len} values, {} needed", values.len())));
    }
    for (i, v) in values.enumerate() {
        *out.add(i) = v;
    }
    Ok(())
}

// ------------------------------------------------------------------ misc

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mr_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message describing the last failed call on this thread, or an empty
/// string. Valid until the next `mr_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ------------------------------------------------------------------ posterior

/// Fits a posterior from confusion-matrix CSV text with the same symmetric
/// prior concentration `prior` in every cell.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_from_csv(
    csv_text: *const c_char,
    prior: f64,
    out: *mut *mut MrPosterior,
) -> MrStatus {
    guard(|| {
        let text = str_arg(csv_text, "csv_text")?;
        let out = out_ptr(out, "out")?;
        let cm = ConfusionMatrix::from_csv_str(text, Path::new("<csv>"))?;
        let post = fit_posterior(&cm, &vec![prior; cm.len()])?;
        *out = Box::into_raw(Box::new(MrPosterior(post)));
        Ok(())
    })
}

/// Fits a posterior from `k` labels and a row-major `k × k` count matrix
/// (rows are true classes). `prior_alpha` holds `k` concentrations, or is
/// null for a uniform prior.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_from_counts(
    labels: *const *const c_char,
    k: usize,
    counts: *const u64,
    prior_alpha: *const f64,
    out: *mut *mut MrPosterior,
) -> MrStatus {
    guard(|| {
        if labels.is_null() {
            return Err(null("labels"));
        }
        if counts.is_null() {
            return Err(null("counts"));
        }
        let out = out_ptr(out, "out")?;
        let classes = (0..k)
            .map(|i| str_arg(*labels.add(i), "labels[i]").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let flat = std::slice::from_raw_parts(counts, k * k);
        let rows = flat.chunks(k.max(1)).take(k).map(<[u64]>::to_vec).collect();
        let cm = ConfusionMatrix::new(classes, rows)?;
        let alpha = if prior_alpha.is_null() {
            vec![1.0; k]
        } else {
            std::slice::from_raw_parts(prior_alpha, k).to_vec()
        };
        *out = Box::into_raw(Box::new(MrPosterior(fit_posterior(&cm, &alpha)?)));
        Ok(())
    })
}

/// Adds a further row-major `k × k` block of counts to the posterior in place.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_update(posterior: *mut MrPosterior, counts: *const u64) -> MrStatus {
    guard(|| {
        let post = out_ptr(posterior, "posterior")?;
        if counts.is_null() {
            return Err(null("counts"));
        }
        let k = post.0.len();
        let flat = std::slice::from_raw_parts(counts, k * k);
        let cm = ConfusionMatrix::new(post.0.classes.clone(), flat.chunks(k).map(<[u64]>::to_vec).collect())?;
        post.0 = post.0.updated(&cm)?;
        Ok(())
    })
}

/// Number of classes, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_num_classes(posterior: *const MrPosterior) -> usize {
    posterior.as_ref().map_or(0, |p| p.0.len())
}

/// Label of class `i` as a newly allocated string.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_class_label(
    posterior: *const MrPosterior,
    i: usize,
    out: *mut *mut c_char,
) -> MrStatus {
    guard(|| {
        let post = handle(posterior, "posterior")?;
        let out = out_ptr(out, "out")?;
        let label = post.0.classes.get(i).ok_or_else(|| invalid(format!("class index {i} out of range")))?;
        *out = into_c_string(label.clone())?;
        Ok(())
    })
}

/// Copies the row-major posterior concentrations into `out[0..k*k]`.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_alpha(posterior: *const MrPosterior, out: *mut f64, len: usize) -> MrStatus {
    guard(|| {
        let post = handle(posterior, "posterior")?;
        let flat: Vec<f64> = post.0.posterior_alpha.iter().flatten().copied().collect();
        write_slice(out, len, flat.into_iter())
    })
}

/// Copies the row-major posterior mean of θ into `out[0..k*k]`.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_mean(posterior: *const MrPosterior, out: *mut f64, len: usize) -> MrStatus {
    guard(|| {
        let post = handle(posterior, "posterior")?;
        let flat: Vec<f64> = posterior_mean(&post.0).into_iter().flatten().collect();
        write_slice(out, len, flat.into_iter())
    })
}

/// Quantile `q` of the Beta marginal of cell `(i, j)`.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_marginal_quantile(
    posterior: *const MrPosterior,
    i: usize,
    j: usize,
    q: f64,
    out: *mut f64,
) -> MrStatus {
    guard(|| {
        let post = handle(posterior, "posterior")?;
        let out = out_ptr(out, "out")?;
        *out = marginal_density_summary(&post.0, i, j, &[q])?[0];
        Ok(())
    })
}

/// Serialises the posterior as JSON.
#[no_mangle]
pub unsafe extern "C" fn mr_posterior_to_json(posterior: *const MrPosterior, out: *mut *mut c_char) -> MrStatus {
    guard(|| {
        let post = handle(posterior, "posterior")?;
        let out = out_ptr(out, "out")?;
        *out = into_c_string(modelrisk::io::to_json(&post.0))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_posterior_free(posterior: *mut MrPosterior) {
    if !posterior.is_null() {
        drop(Box::from_raw(posterior));
    }
}

// ------------------------------------------------------------------ costs

/// Built-in cost configuration.
#[no_mangle]
pub unsafe extern "C" fn mr_costs_default(out: *mut *mut MrCosts) -> MrStatus {
    guard(|| {
        *out_ptr(out, "out")? = Box::into_raw(Box::new(MrCosts(CostConfig::default())));
        Ok(())
    })
}

/// Cost configuration from TOML text.
#[no_mangle]
pub unsafe extern "C" fn mr_costs_from_toml(toml_text: *const c_char, out: *mut *mut MrCosts) -> MrStatus {
    guard(|| {
        let text = str_arg(toml_text, "toml_text")?;
        let out = out_ptr(out, "out")?;
        let cfg = CostConfig::from_toml_str(text, Path::new("<toml>"))?;
        *out = Box::into_raw(Box::new(MrCosts(cfg)));
        Ok(())
    })
}

/// Analytic mean of the failure-cost mixture.
#[no_mangle]
pub unsafe extern "C" fn mr_costs_expected_failure_cost(costs: *const MrCosts, out: *mut f64) -> MrStatus {
    guard(|| {
        let cfg = handle(costs, "costs")?;
        *out_ptr(out, "out")? = expected_failure_cost(&cfg.0.failure_cost);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_costs_free(costs: *mut MrCosts) {
    if !costs.is_null() {
        drop(Box::from_raw(costs));
    }
}

// ------------------------------------------------------------------ risk

unsafe fn strategy_set(escalate: *const c_char) -> Result<Vec<Strategy>, Failure> {
    let hybrid = match opt_str_arg(escalate, "escalate")? {
        Some(list) => Strategy::hybrid(list.split(',').map(str::trim).filter(|s| !s.is_empty())),
        None => Strategy::default_hybrid(),
    };
    Ok(vec![Strategy::Manual, Strategy::Automated, hybrid])
}

/// Monte Carlo risk table for the manual, automated and hybrid strategies.
/// `escalate` is a comma-separated list of outputs the hybrid strategy sends
/// to manual evaluation, or null for the default set.
#[no_mangle]
pub unsafe extern "C" fn mr_risk_table_new(
    posterior: *const MrPosterior,
    costs: *const MrCosts,
    escalate: *const c_char,
    n: u64,
    seed: u64,
    out: *mut *mut MrRiskTable,
) -> MrStatus {
    guard(|| {
        let post = handle(posterior, "posterior")?;
        let cfg = handle(costs, "costs")?;
        let out = out_ptr(out, "out")?;
        let n = usize::try_from(n).map_err(|_| invalid("n does not fit in memory"))?;
        let table = risk_table(&strategy_set(escalate)?, &post.0, &cfg.0, n, seed, false)?;
        *out = Box::into_raw(Box::new(MrRiskTable(table)));
        Ok(())
    })
}

/// Expected cost and its standard error for one scenario and strategy
/// (`manual`, `automated` or `hybrid`). `std_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn mr_risk_table_cell(
    table: *const MrRiskTable,
    scenario: *const c_char,
    strategy: *const c_char,
    mean: *mut f64,
    std_error: *mut f64,
) -> MrStatus {
    guard(|| {
        let t = handle(table, "table")?;
        let cell = t.0.cell(str_arg(scenario, "scenario")?, str_arg(strategy, "strategy")?)?;
        *out_ptr(mean, "mean")? = cell.mean;
        if let Some(se) = std_error.as_mut() {
            *se = cell.std_error;
        }
        Ok(())
    })
}

/// Serialises the table as JSON.
#[no_mangle]
pub unsafe extern "C" fn mr_risk_table_to_json(table: *const MrRiskTable, out: *mut *mut c_char) -> MrStatus {
    guard(|| {
        let t = handle(table, "table")?;
        let out = out_ptr(out, "out")?;
        *out = into_c_string(modelrisk::io::to_json(&t.0))?;
        Ok(())
    })
}

/// Break-even no-anomaly prevalence between two strategies. `profile` is
/// `uniform`, a single anomaly label, or `label=weight,...`. `threshold` is
/// set to NaN when the two strategies cost the same everywhere.
#[no_mangle]
pub unsafe extern "C" fn mr_break_even(
    table: *const MrRiskTable,
    challenger: *const c_char,
    baseline: *const c_char,
    profile: *const c_char,
    threshold: *mut f64,
    regime: *mut MrRegime,
) -> MrStatus {
    guard(|| {
        let t = handle(table, "table")?;
        let profile = parse_anomaly_profile(str_arg(profile, "profile")?, &t.0)?;
        let be = break_even_between(&t.0, str_arg(challenger, "challenger")?, str_arg(baseline, "baseline")?, &profile)?;
        *out_ptr(threshold, "threshold")? = be.threshold.unwrap_or(f64::NAN);
        if let Some(r) = regime.as_mut() {
            *r = match be.regime {
                BreakEvenRegime::ChallengerAbove => MrRegime::ChallengerAbove,
                BreakEvenRegime::ChallengerBelow => MrRegime::ChallengerBelow,
                BreakEvenRegime::ChallengerAlways => MrRegime::ChallengerAlways,
                BreakEvenRegime::BaselineAlways => MrRegime::BaselineAlways,
                BreakEvenRegime::Identical => MrRegime::Identical,
            };
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_risk_table_free(table: *mut MrRiskTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

// ------------------------------------------------------------------ vopi

/// Expected value of perfect information about θ in one scenario, per
/// inspected item. With `expected_failure_cost` non-zero the failure cost is
/// fixed at its mean inside each draw instead of being sampled. Any of the
/// output pointers except `vopi_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn mr_vopi(
    posterior: *const MrPosterior,
    costs: *const MrCosts,
    escalate: *const c_char,
    scenario: *const c_char,
    n: u64,
    seed: u64,
    expected_failure_cost: i32,
    vopi_out: *mut f64,
    std_error: *mut f64,
    prior_cost: *mut f64,
    preposterior_cost: *mut f64,
) -> MrStatus {
    guard(|| {
        let post = handle(posterior, "posterior")?;
        let cfg = handle(costs, "costs")?;
        let scenario = str_arg(scenario, "scenario")?;
        let out = out_ptr(vopi_out, "vopi_out")?;
        let settings = VopiSettings {
            treatment: if expected_failure_cost != 0 {
                FailureCostTreatment::Expected
            } else {
                FailureCostTreatment::Sampled
            },
            ..VopiSettings::new(usize::try_from(n).map_err(|_| invalid("n does not fit in memory"))?, seed)
        };
        let e = vopi(scenario, &strategy_set(escalate)?, &post.0, &cfg.0, &settings)?;
        *out = e.vopi.mean;
        for (p, v) in [
            (std_error, e.vopi.std_error),
            (prior_cost, e.prior_cost.mean),
            (preposterior_cost, e.preposterior_cost.mean),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

