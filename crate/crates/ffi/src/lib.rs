//! C interface to the isoprice solvers.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns an
//! [`IsopriceStatus`]; the message of the most recent failure on the calling
//! thread is available through [`isoprice_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use isoprice::cli::{solve, Solved};
use isoprice::config::ExperimentConfig;
use isoprice::greeks;
use isoprice::reference::bs_exact_call;
use isoprice::stepper::Storage;
use isoprice::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsopriceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    Solver = 5,
    Io = 6,
    Panic = 7,
}

/// Quantity requested from [`isoprice_solution_eval`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsopriceQuantity {
    Value = 0,
    Delta = 1,
    Gamma = 2,
    Theta = 3,
}

/// Parsed experiment configuration.
pub struct IsopriceConfig(ExperimentConfig);

/// Result of one run: discretization and the stored time levels.
pub struct IsopriceSolution(Solved);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> IsopriceStatus {
    match e {
        Error::Config { .. } => IsopriceStatus::Config,
        Error::Io(_) => IsopriceStatus::Io,
        Error::Solver { .. } | Error::NewtonDivergence { .. } | Error::SingularPivot(_) => IsopriceStatus::Solver,
        _ => IsopriceStatus::InvalidArgument,
    }
}

/// Runs `f`, recording the error message and mapping panics to a status.
fn guard(f: impl FnOnce() -> Result<(), (IsopriceStatus, String)>) -> IsopriceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IsopriceStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            IsopriceStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (IsopriceStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (IsopriceStatus, String) {
    (IsopriceStatus::NullPointer, format!("{what} is null"))
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes (excluding the terminator), so a caller can size
/// a buffer by passing `len = 0` first.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn isoprice_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses a TOML configuration from a NUL-terminated string.
///
/// Relative paths inside the configuration (weights files, output
/// directory) resolve against the process working directory.
///
/// # Safety
/// `toml` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isoprice_config_parse(toml: *const c_char, out: *mut *mut IsopriceConfig) -> IsopriceStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| (IsopriceStatus::InvalidUtf8, e.to_string()))?;
        let cfg = ExperimentConfig::parse(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(IsopriceConfig(cfg)));
        Ok(())
    })
}

/// Loads a configuration file; relative paths resolve against its directory.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isoprice_config_load(path: *const c_char, out: *mut *mut IsopriceConfig) -> IsopriceStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| (IsopriceStatus::InvalidUtf8, e.to_string()))?;
        let cfg = ExperimentConfig::load(path.as_ref()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(IsopriceConfig(cfg)));
        Ok(())
    })
}

/// Releases a configuration. Null is accepted.
///
/// # Safety
/// `cfg` must be null or a handle from `isoprice_config_parse` /
/// `isoprice_config_load` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn isoprice_config_free(cfg: *mut IsopriceConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Solves the configured model. Zero `elements` or `steps` selects the
/// value from the configuration. Only the t = 0 levels are kept.
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isoprice_solve(
    cfg: *const IsopriceConfig,
    elements: usize,
    steps: usize,
    out: *mut *mut IsopriceSolution,
) -> IsopriceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let d = &cfg.discretization;
        let elements = if elements == 0 { d.elements } else { elements };
        let steps = if steps == 0 { d.steps } else { steps };
        let solved = solve(cfg, elements, steps, Storage::Endpoints).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(IsopriceSolution(solved)));
        Ok(())
    })
}

/// Releases a solution. Null is accepted.
///
/// # Safety
/// `sol` must be null or a handle from `isoprice_solve` that has not been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn isoprice_solution_free(sol: *mut IsopriceSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Evaluates `quantity` of the first unknown at t = 0 for `n` spot values.
///
/// # Safety
/// `sol` must be a live solution handle, `s` must point to `n` readable
/// doubles and `out` to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn isoprice_solution_eval(
    sol: *const IsopriceSolution,
    quantity: IsopriceQuantity,
    s: *const f64,
    n: usize,
    out: *mut f64,
) -> IsopriceStatus {
    guard(|| {
        let solved = &sol.as_ref().ok_or_else(|| null("sol"))?.0;
        if n == 0 {
            return Ok(());
        }
        if s.is_null() {
            return Err(null("s"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let s = std::slice::from_raw_parts(s, n);
        let tau = solved.final_tau();
        let coeffs = solved.surface.last().field(0);
        let model = solved.model();
        let disc = &solved.disc;
        let curve = match quantity {
            IsopriceQuantity::Value => greeks::value(disc, coeffs, model, tau, s),
            IsopriceQuantity::Delta => greeks::delta(disc, coeffs, model, tau, s),
            IsopriceQuantity::Gamma => greeks::gamma(disc, coeffs, model, tau, s),
            IsopriceQuantity::Theta => {
                greeks::theta(disc, &solved.surface, solved.surface.slices.len() - 1, 0, model, s)
            }
        }
        .map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&curve.values);
        Ok(())
    })
}

/// Number of basis functions (and coefficients) of the solution.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn isoprice_solution_dofs(sol: *const IsopriceSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.surface.last().field(0).len())
}

/// Copies the t = 0 coefficients of the first unknown into `out`, which must
/// hold at least [`isoprice_solution_dofs`] doubles.
///
/// # Safety
/// `sol` must be a live solution handle and `out` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn isoprice_solution_coefficients(
    sol: *const IsopriceSolution,
    out: *mut f64,
    len: usize,
) -> IsopriceStatus {
    guard(|| {
        let solved = &sol.as_ref().ok_or_else(|| null("sol"))?.0;
        let c = solved.surface.last().field(0);
        if out.is_null() {
            return Err(null("out"));
        }
        if len < c.len() {
            return Err((
                IsopriceStatus::InvalidArgument,
                format!("buffer holds {len} values, {} needed", c.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, c.len()).copy_from_slice(c);
        Ok(())
    })
}

/// Closed-form European call under constant-volatility lognormal dynamics.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isoprice_bs_call(
    s: f64,
    strike: f64,
    rate: f64,
    sigma: f64,
    maturity: f64,
    out: *mut f64,
) -> IsopriceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(strike > 0.0 && sigma > 0.0 && maturity > 0.0) || !s.is_finite() || !rate.is_finite() {
            return Err((
                IsopriceStatus::InvalidArgument,
                "strike, sigma and maturity must be positive and inputs finite".into(),
            ));
        }
        *out = bs_exact_call(s, strike, rate, sigma, maturity);
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn isoprice_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
