//! C ABI for the freshness library.
//!
//! The surface is deliberately small: build or load a chain behind an opaque
//! handle, query its basic facts (size, stationary distribution,
//! reversibility, MAP switch time), evaluate the analytic mean binary
//! freshness of any of the five structured estimators at a fixed sampling
//! rate, and cross-check a configuration by Monte Carlo simulation.
//!
//! Conventions, shared by every entry point:
//!
//! - functions return a [`CfStatus`]; results travel through out-pointers
//!   that are written only on `CF_STATUS_OK`;
//! - a failing call stores a thread-local diagnostic retrievable with
//!   [`ctmc_freshness_last_error`]; strings returned to the caller are owned
//!   by the caller and must be released with [`ctmc_freshness_string_free`];
//! - null pointers are rejected, never dereferenced;
//! - panics are caught at the boundary and reported as
//!   `CF_STATUS_NUMERICAL_FAILURE`, so no unwinding crosses the ABI.
//!
//! The generated header lives at `include/ctmc_freshness.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ctmc_freshness::config::{chain_from, RawChain};
use ctmc_freshness::{
    default_map_structure, mbf_closed, pmap_from_map, preset_chain, simulate, Chain, Error,
    EstimatorSpec, SamplingPolicy, SimConfig,
};

/// Result of every C entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    /// Success; out-pointers hold the results.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// The inputs were rejected (malformed generator, bad estimator
    /// parameters, nonpositive rate, unknown preset, ...).
    InvalidArgument = 2,
    /// A solver or simulation failed numerically.
    NumericalFailure = 3,
}

/// Estimator selector for [`ctmc_freshness_mbf`] and
/// [`ctmc_freshness_simulate`].
///
/// Parameter usage per kind: `Martingale` ignores all three parameters;
/// `Exponential` needs `lambda > 0`; `Erlang` needs `gamma >= 2` and
/// `lambda > 0`; `TauMap` needs `tau >= 0` (may be infinite; pass NaN to use
/// the chain's MAP switch time); `PMap` derives the full MAP schedule from
/// the chain and ignores the parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfEstimatorKind {
    Martingale = 0,
    Exponential = 1,
    Erlang = 2,
    TauMap = 3,
    PMap = 4,
}

/// Opaque handle to a validated chain (generator, stationary distribution,
/// reversibility flag). Create with [`ctmc_freshness_chain_new`] or
/// [`ctmc_freshness_chain_preset`]; release with
/// [`ctmc_freshness_chain_free`].
pub struct CfChain {
    inner: Chain,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let stored = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("invalid diagnostic").expect("static text has no NUL"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

/// Same grouping as the CLI exit codes: inputs the caller can fix versus
/// numerical breakdowns inside the solvers.
fn status_for(error: &Error) -> CfStatus {
    match error {
        Error::ParseError(_)
        | Error::RowSumViolation(_)
        | Error::NegativeOffDiagonal(_)
        | Error::NotIrreducible(_)
        | Error::NegativeTime(_)
        | Error::InvalidThresholds(_)
        | Error::RandomizedEstimatorUnsupported(_)
        | Error::NonpositiveRate(_)
        | Error::InfeasibleBounds(_)
        | Error::NoUniqueMaximum(_) => CfStatus::InvalidArgument,
        Error::NotReversible(_)
        | Error::SingularResolvent(_)
        | Error::MissingAuxStage(_)
        | Error::SingularSystem(_)
        | Error::SingularSolve(_)
        | Error::MaxIterationsExceeded(_)
        | Error::BracketingFailure(_) => CfStatus::NumericalFailure,
    }
}

fn fail(error: &Error) -> CfStatus {
    set_last_error(&error.to_string());
    status_for(error)
}

/// Run `body` with panics converted to `NumericalFailure`.
fn guarded(body: impl FnOnce() -> CfStatus) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in library call".to_string());
            set_last_error(&message);
            CfStatus::NumericalFailure
        }
    }
}

fn estimator_for(
    chain: &Chain,
    kind: CfEstimatorKind,
    lambda: f64,
    gamma: u32,
    tau: f64,
) -> Result<EstimatorSpec, Error> {
    let spec = match kind {
        CfEstimatorKind::Martingale => EstimatorSpec::Martingale,
        CfEstimatorKind::Exponential => EstimatorSpec::Exponential { lambda },
        CfEstimatorKind::Erlang => EstimatorSpec::Erlang { gamma, lambda },
        CfEstimatorKind::TauMap => {
            let tau = if tau.is_nan() {
                default_map_structure(chain)?.tau_star
            } else {
                tau
            };
            EstimatorSpec::TauMap { tau }
        }
        CfEstimatorKind::PMap => {
            let map = default_map_structure(chain)?;
            EstimatorSpec::PMap {
                schedule: pmap_from_map(chain, &map)?,
            }
        }
    };
    spec.validate(chain.size())?;
    Ok(spec)
}

/// Build a chain from a row-major generator.
///
/// `rates` points to `size * size` doubles. Diagonals may either hold the
/// usual negative exit rates or be all zero, in which case they are derived
/// as negative off-diagonal row sums. `label` is an optional NUL-terminated
/// UTF-8 name (null for a default).
///
/// # Safety
/// `rates` must point to at least `size * size` readable doubles;
/// `out_chain` must be a valid writable pointer; `label`, when non-null,
/// must be a NUL-terminated string. All pointers must stay valid for the
/// duration of the call.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_chain_new(
    size: usize,
    rates: *const f64,
    label: *const c_char,
    out_chain: *mut *mut CfChain,
) -> CfStatus {
    if rates.is_null() || out_chain.is_null() {
        set_last_error("rates and out_chain must not be null");
        return CfStatus::NullArgument;
    }
    if size == 0 || size > usize::MAX / size.max(1) {
        set_last_error("size * size overflows");
        return CfStatus::InvalidArgument;
    }
    let values = std::slice::from_raw_parts(rates, size * size).to_vec();
    let name = if label.is_null() {
        None
    } else {
        match CStr::from_ptr(label).to_str() {
            Ok(s) => Some(s.to_string()),
            Err(_) => {
                set_last_error("label is not valid UTF-8");
                return CfStatus::InvalidArgument;
            }
        }
    };
    guarded(|| {
        let raw = RawChain {
            preset: None,
            size: Some(size),
            rates: Some(values),
            label: name,
        };
        match chain_from(&raw) {
            Ok(chain) => {
                *out_chain = Box::into_raw(Box::new(CfChain { inner: chain }));
                CfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Build one of the bundled example chains by name.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out_chain` a valid writable
/// pointer, both valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_chain_preset(
    name: *const c_char,
    out_chain: *mut *mut CfChain,
) -> CfStatus {
    if name.is_null() || out_chain.is_null() {
        set_last_error("name and out_chain must not be null");
        return CfStatus::NullArgument;
    }
    let name = match CStr::from_ptr(name).to_str() {
        Ok(s) => s.to_string(),
        Err(_) => {
            set_last_error("preset name is not valid UTF-8");
            return CfStatus::InvalidArgument;
        }
    };
    guarded(|| match preset_chain(&name) {
        Ok(chain) => {
            *out_chain = Box::into_raw(Box::new(CfChain { inner: chain }));
            CfStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// Release a chain handle. Null is a no-op.
///
/// # Safety
/// `chain` must be null or a pointer previously returned by a chain
/// constructor and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_chain_free(chain: *mut CfChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of states.
///
/// # Safety
/// `chain` must be a live chain handle and `out_size` a valid writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_chain_size(
    chain: *const CfChain,
    out_size: *mut usize,
) -> CfStatus {
    if chain.is_null() || out_size.is_null() {
        set_last_error("chain and out_size must not be null");
        return CfStatus::NullArgument;
    }
    *out_size = (*chain).inner.size();
    CfStatus::Ok
}

/// Copy the stationary distribution into `out_pi`.
///
/// # Safety
/// `chain` must be a live chain handle and `out_pi` must point to at least
/// `len >= size` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_chain_stationary(
    chain: *const CfChain,
    out_pi: *mut f64,
    len: usize,
) -> CfStatus {
    if chain.is_null() || out_pi.is_null() {
        set_last_error("chain and out_pi must not be null");
        return CfStatus::NullArgument;
    }
    let pi = (*chain).inner.pi();
    if len < pi.len() {
        set_last_error("output buffer shorter than the state count");
        return CfStatus::InvalidArgument;
    }
    let out = std::slice::from_raw_parts_mut(out_pi, pi.len());
    out.copy_from_slice(pi.as_slice());
    CfStatus::Ok
}

/// Whether the chain satisfies detailed balance (1) or not (0).
///
/// # Safety
/// `chain` must be a live chain handle and `out_reversible` a valid writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_chain_is_reversible(
    chain: *const CfChain,
    out_reversible: *mut i32,
) -> CfStatus {
    if chain.is_null() || out_reversible.is_null() {
        set_last_error("chain and out_reversible must not be null");
        return CfStatus::NullArgument;
    }
    *out_reversible = i32::from((*chain).inner.reversible());
    CfStatus::Ok
}

/// Largest MAP transition time of the chain (0 when the MAP estimate never
/// switches), scanned over the chain's default window.
///
/// # Safety
/// `chain` must be a live chain handle and `out_tau` a valid writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_chain_tau_star(
    chain: *const CfChain,
    out_tau: *mut f64,
) -> CfStatus {
    if chain.is_null() || out_tau.is_null() {
        set_last_error("chain and out_tau must not be null");
        return CfStatus::NullArgument;
    }
    guarded(|| match default_map_structure(&(*chain).inner) {
        Ok(map) => {
            *out_tau = map.tau_star;
            CfStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// Analytic mean binary freshness of an estimator at sampling rate `mu`.
///
/// See [`CfEstimatorKind`] for which of `lambda`, `gamma`, `tau` each kind
/// reads.
///
/// # Safety
/// `chain` must be a live chain handle and `out_mbf` a valid writable
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_mbf(
    chain: *const CfChain,
    kind: CfEstimatorKind,
    lambda: f64,
    gamma: u32,
    tau: f64,
    mu: f64,
    out_mbf: *mut f64,
) -> CfStatus {
    if chain.is_null() || out_mbf.is_null() {
        set_last_error("chain and out_mbf must not be null");
        return CfStatus::NullArgument;
    }
    let inner = &(*chain).inner;
    guarded(|| {
        let spec = match estimator_for(inner, kind, lambda, gamma, tau) {
            Ok(spec) => spec,
            Err(e) => return fail(&e),
        };
        match mbf_closed(inner, &spec, mu) {
            Ok(value) => {
                *out_mbf = value;
                CfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Monte Carlo estimate of the mean binary freshness under a fixed sampling
/// rate, for cross-checking the analytic value.
///
/// Pass a negative `warmup` to use the default (1% of the horizon). Writes
/// the replication mean to `out_mbf` and its standard error to `out_se`.
///
/// # Safety
/// `chain` must be a live chain handle; `out_mbf` and `out_se` must be valid
/// writable pointers.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ctmc_freshness_simulate(
    chain: *const CfChain,
    kind: CfEstimatorKind,
    lambda: f64,
    gamma: u32,
    tau: f64,
    mu: f64,
    horizon: f64,
    warmup: f64,
    seed: u64,
    replications: usize,
    out_mbf: *mut f64,
    out_se: *mut f64,
) -> CfStatus {
    if chain.is_null() || out_mbf.is_null() || out_se.is_null() {
        set_last_error("chain, out_mbf and out_se must not be null");
        return CfStatus::NullArgument;
    }
    let inner = &(*chain).inner;
    guarded(|| {
        let spec = match estimator_for(inner, kind, lambda, gamma, tau) {
            Ok(spec) => spec,
            Err(e) => return fail(&e),
        };
        let config = SimConfig {
            chain: inner.clone(),
            estimator: spec,
            policy: SamplingPolicy::Fixed { mu },
            horizon,
            warmup: if warmup < 0.0 {
                SimConfig::default_warmup(horizon)
            } else {
                warmup
            },
            seed,
            replications,
        };
        match simulate(&config) {
            Ok(result) => {
                *out_mbf = result.empirical_mbf;
                *out_se = result.std_error;
                CfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Diagnostic message of the most recent failure on this thread, or null if
/// none. The caller owns the returned string and must release it with
/// [`ctmc_freshness_string_free`].
#[no_mangle]
pub extern "C" fn ctmc_freshness_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(message) => message.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Library version as a NUL-terminated string. The caller owns the returned
/// string and must release it with [`ctmc_freshness_string_free`].
#[no_mangle]
pub extern "C" fn ctmc_freshness_version() -> *mut c_char {
    CString::new(env!("CARGO_PKG_VERSION"))
        .map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Release a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer previously returned by a string-returning
/// function of this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctmc_freshness_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
