//! C ABI over the cabinet library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` and
//! released by the matching `*_free`. Every fallible call returns a
//! [`CabinetStatus`]; the message for the most recent failure on the calling
//! thread is available from [`cabinet_last_error`].

use cabinet::harness::{run_experiment, Outcome, Scenario};
use cabinet::sim::SimConfig;
use cabinet::weight_scheme::{generate_scheme, validate_scheme, Violation, WeightScheme};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CabinetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    ConfigError = 4,
    Livelock = 5,
    AuditFailed = 6,
    BufferTooSmall = 7,
    NotRun = 8,
    Panic = 9,
}

/// Mirrors the scheme validator's verdict.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CabinetViolation {
    None = 0,
    BadThresholdRange = 1,
    NonpositiveWeight = 2,
    CtMismatch = 3,
    LivenessI2 = 4,
    SafetyI1 = 5,
}

impl From<Violation> for CabinetViolation {
    fn from(v: Violation) -> Self {
        match v {
            Violation::None => CabinetViolation::None,
            Violation::BadThresholdRange => CabinetViolation::BadThresholdRange,
            Violation::NonpositiveWeight => CabinetViolation::NonpositiveWeight,
            Violation::CtMismatch => CabinetViolation::CtMismatch,
            Violation::LivenessI2 => CabinetViolation::LivenessI2,
            Violation::SafetyI1 => CabinetViolation::SafetyI1,
        }
    }
}

/// A generated weight scheme.
pub struct CabinetScheme(WeightScheme);

/// A configured simulation and, once run, its results.
pub struct CabinetSim {
    config: SimConfig,
    replications: u64,
    outcome: Option<Outcome>,
    csv: Option<String>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: CabinetStatus, msg: impl Into<String>) -> CabinetStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> CabinetStatus) -> CabinetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CabinetStatus::Panic, "internal panic"),
    }
}

/// Copies `text` plus a NUL into `buf`. `needed` receives the full size.
unsafe fn copy_out(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> CabinetStatus {
    let len = text.len() + 1;
    if !needed.is_null() {
        *needed = len;
    }
    if buf.is_null() || cap < len {
        return fail(CabinetStatus::BufferTooSmall, format!("need {len} bytes"));
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    CabinetStatus::Ok
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn cabinet_status_str(status: CabinetStatus) -> *const c_char {
    let s: &'static CStr = match status {
        CabinetStatus::Ok => c"ok",
        CabinetStatus::NullPointer => c"null pointer",
        CabinetStatus::InvalidArgument => c"invalid argument",
        CabinetStatus::InvalidUtf8 => c"invalid utf-8",
        CabinetStatus::ConfigError => c"config error",
        CabinetStatus::Livelock => c"livelock",
        CabinetStatus::AuditFailed => c"audit failed",
        CabinetStatus::BufferTooSmall => c"buffer too small",
        CabinetStatus::NotRun => c"simulation not run",
        CabinetStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Copies the calling thread's last error message.
///
/// # Safety
/// `buf` must be valid for `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn cabinet_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> CabinetStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_out(&msg, buf, cap, needed)
}

/// # Safety
/// `out` must be a valid pointer to write the new handle to.
#[no_mangle]
pub unsafe extern "C" fn cabinet_scheme_new(n: usize, t: usize, out: *mut *mut CabinetScheme) -> CabinetStatus {
    guard(|| {
        if out.is_null() {
            return fail(CabinetStatus::NullPointer, "out is null");
        }
        match generate_scheme(n, t) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(CabinetScheme(s)));
                CabinetStatus::Ok
            }
            Err(e) => fail(CabinetStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `scheme` must come from `cabinet_scheme_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cabinet_scheme_free(scheme: *mut CabinetScheme) {
    if !scheme.is_null() {
        drop(Box::from_raw(scheme));
    }
}

/// # Safety
/// `scheme` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cabinet_scheme_len(scheme: *const CabinetScheme) -> usize {
    scheme.as_ref().map_or(0, |s| s.0.n())
}

/// # Safety
/// `scheme` must be a live handle; `ct` and `ratio` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cabinet_scheme_params(
    scheme: *const CabinetScheme,
    ct: *mut f64,
    ratio: *mut f64,
) -> CabinetStatus {
    let Some(s) = scheme.as_ref() else {
        return fail(CabinetStatus::NullPointer, "scheme is null");
    };
    if ct.is_null() || ratio.is_null() {
        return fail(CabinetStatus::NullPointer, "output is null");
    }
    *ct = s.0.ct();
    *ratio = s.0.ratio();
    CabinetStatus::Ok
}

/// Writes weights heaviest first.
///
/// # Safety
/// `scheme` must be a live handle; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn cabinet_scheme_weights(
    scheme: *const CabinetScheme,
    buf: *mut f64,
    cap: usize,
) -> CabinetStatus {
    let Some(s) = scheme.as_ref() else {
        return fail(CabinetStatus::NullPointer, "scheme is null");
    };
    let w = s.0.weights();
    if buf.is_null() || cap < w.len() {
        return fail(CabinetStatus::BufferTooSmall, format!("need {} weights", w.len()));
    }
    ptr::copy_nonoverlapping(w.as_ptr(), buf, w.len());
    CabinetStatus::Ok
}

/// # Safety
/// `weights` must hold `len` doubles; `verdict` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cabinet_validate_scheme(
    weights: *const f64,
    len: usize,
    ct: f64,
    t: usize,
    verdict: *mut CabinetViolation,
) -> CabinetStatus {
    if weights.is_null() || verdict.is_null() {
        return fail(CabinetStatus::NullPointer, "weights or verdict is null");
    }
    let ws = std::slice::from_raw_parts(weights, len);
    *verdict = validate_scheme(ws, ct, t).violated.into();
    CabinetStatus::Ok
}

/// Builds a simulation from a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cabinet_sim_new(toml: *const c_char, out: *mut *mut CabinetSim) -> CabinetStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return fail(CabinetStatus::NullPointer, "toml or out is null");
        }
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(CabinetStatus::InvalidUtf8, "scenario is not utf-8");
        };
        let built = Scenario::from_toml(text).and_then(|s| Ok((s.to_config()?, s.replications())));
        match built {
            Ok((config, replications)) => {
                *out = Box::into_raw(Box::new(CabinetSim {
                    config,
                    replications,
                    outcome: None,
                    csv: None,
                }));
                CabinetStatus::Ok
            }
            Err(e) => fail(CabinetStatus::ConfigError, e.to_string()),
        }
    })
}

/// # Safety
/// `sim` must come from `cabinet_sim_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cabinet_sim_free(sim: *mut CabinetSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs (or reruns) the simulation. Results stay available on the handle
/// even when the status reports a livelock or audit failure.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cabinet_sim_run(sim: *mut CabinetSim) -> CabinetStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(CabinetStatus::NullPointer, "sim is null");
        };
        let outcome = match run_experiment(&sim.config, sim.replications) {
            Ok(o) => o,
            Err(e) => return fail(CabinetStatus::ConfigError, e.to_string()),
        };
        sim.csv = Some(outcome.csv_string());
        let status = if !outcome.violations.is_empty() {
            fail(CabinetStatus::AuditFailed, outcome.violations[0].to_string())
        } else if outcome.summary.livelocks > 0 {
            fail(CabinetStatus::Livelock, "no progress within the time cap")
        } else {
            CabinetStatus::Ok
        };
        sim.outcome = Some(outcome);
        status
    })
}

/// Committed batch rounds, or 0 before a run.
///
/// # Safety
/// `sim` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cabinet_sim_rounds(sim: *const CabinetSim) -> usize {
    sim.as_ref()
        .and_then(|s| s.outcome.as_ref())
        .map_or(0, |o| o.rows.len())
}

/// # Safety
/// `sim` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cabinet_sim_latency(
    sim: *const CabinetSim,
    mean_ms: *mut f64,
    p99_ms: *mut f64,
) -> CabinetStatus {
    let Some(sim) = sim.as_ref() else {
        return fail(CabinetStatus::NullPointer, "sim is null");
    };
    let Some(o) = sim.outcome.as_ref() else {
        return fail(CabinetStatus::NotRun, "call cabinet_sim_run first");
    };
    if mean_ms.is_null() || p99_ms.is_null() {
        return fail(CabinetStatus::NullPointer, "output is null");
    }
    *mean_ms = o.summary.mean_latency_ms;
    *p99_ms = o.summary.p99_latency_ms;
    CabinetStatus::Ok
}

/// Copies the metrics CSV. Call with a null buffer to learn the size.
///
/// # Safety
/// `sim` must be a live handle; `buf` must be valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn cabinet_sim_csv(
    sim: *const CabinetSim,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> CabinetStatus {
    let Some(sim) = sim.as_ref() else {
        return fail(CabinetStatus::NullPointer, "sim is null");
    };
    match &sim.csv {
        Some(csv) => copy_out(csv, buf, cap, needed),
        None => fail(CabinetStatus::NotRun, "call cabinet_sim_run first"),
    }
}
