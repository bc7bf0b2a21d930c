//! C ABI for the `asyncclip` simulator.
//!
//! Handles are opaque; every fallible call returns an [`AcStatus`] and leaves
//! a message retrievable with [`ac_last_error_message`] on the calling thread.
//! Strings returned through out-parameters are owned by the caller and must be
//! released with [`ac_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use asyncclip::metrics::{write_run, RunSummary};
use asyncclip::{run_simulation, Error, RunConfig, RunResult};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    Argument = 5,
    DimensionMismatch = 6,
    StalenessOverflow = 7,
    PolicyViolation = 8,
    Diverged = 9,
    Io = 10,
    OutOfRange = 11,
    BufferTooSmall = 12,
    Panic = 99,
}

impl From<&Error> for AcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => AcStatus::Config,
            Error::Argument(_) => AcStatus::Argument,
            Error::DimensionMismatch { .. } => AcStatus::DimensionMismatch,
            Error::StalenessOverflow { .. } => AcStatus::StalenessOverflow,
            Error::PolicyViolation(_) => AcStatus::PolicyViolation,
            Error::NonFiniteGradient { .. } | Error::NonFiniteUpdate { .. } => AcStatus::Diverged,
            Error::Io { .. } => AcStatus::Io,
            Error::Parse { .. } => AcStatus::Parse,
        }
    }
}

/// Opaque run configuration.
pub struct AcConfig(RunConfig);

/// Opaque simulation result; keeps the configuration it was produced from.
pub struct AcResult {
    result: RunResult,
    config: RunConfig,
}

/// One row of the per-round metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AcRecord {
    pub round: u64,
    pub clock: f64,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub min_grad_norm_sq: f64,
    /// Number of updates consumed by the round.
    pub delay_count: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AcSummary {
    pub rounds: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub min_grad_norm_sq: f64,
    pub total_sim_time: f64,
    pub dispatched: u64,
    pub consumed: u64,
    pub in_flight: u64,
    pub queued: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(AcStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(AcStatus::from(&e))
    }
}

fn fail(status: AcStatus, msg: &str) -> Fail {
    set_error(msg);
    Fail(status)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AcStatus::Ok
        }
        Ok(Err(Fail(s))) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            AcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(AcStatus::NullPointer, &format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AcStatus::InvalidUtf8, &format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| fail(AcStatus::NullPointer, &format!("{what} is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| fail(AcStatus::NullPointer, &format!("{what} is NULL")))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Copies `src` into `buf` when it fits; `out_len` always receives the full length.
unsafe fn fill<T: Copy>(src: &[T], buf: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Fail> {
    *out_ptr(out_len, "out_len")? = src.len();
    if src.len() > cap {
        return Err(fail(
            AcStatus::BufferTooSmall,
            &format!("need {} elements, buffer holds {cap}", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(fail(AcStatus::NullPointer, "buffer is NULL"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn ac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_config_from_toml(toml: *const c_char, out: *mut *mut AcConfig) -> AcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = RunConfig::from_toml_str(str_arg(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(AcConfig(cfg)));
        Ok(())
    })
}

/// Reads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_config_load(path: *const c_char, out: *mut *mut AcConfig) -> AcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let cfg = RunConfig::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(AcConfig(cfg)));
        Ok(())
    })
}

/// Applies one `key=value` override (dotted keys reach nested tables). The
/// configuration is unchanged on failure. Cross-field constraints are checked
/// by [`ac_config_validate`] and [`ac_run`], so several overrides may pass
/// through an inconsistent state.
///
/// # Safety
/// `cfg` must be a live handle; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ac_config_set(cfg: *mut AcConfig, assignment: *const c_char) -> AcStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "cfg")?;
        let a = str_arg(assignment, "assignment")?;
        cfg.0 = cfg.0.with_overrides(&[a])?;
        Ok(())
    })
}

/// Checks every constraint `ac_run` would check.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ac_config_validate(cfg: *const AcConfig) -> AcStatus {
    guard(|| {
        handle(cfg, "cfg")?.0.validate()?;
        Ok(())
    })
}

/// Serializes the configuration back to TOML.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_config_to_toml(cfg: *const AcConfig, out: *mut *mut c_char) -> AcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        *out = to_c_string(handle(cfg, "cfg")?.0.to_toml_string()?);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_config_free(cfg: *mut AcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the simulation described by `cfg`.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_run(cfg: *const AcConfig, out: *mut *mut AcResult) -> AcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let config = handle(cfg, "cfg")?.0.clone();
        let result = run_simulation(&config)?;
        *out = Box::into_raw(Box::new(AcResult { result, config }));
        Ok(())
    })
}

/// # Safety
/// `res` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_result_free(res: *mut AcResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Number of recorded rounds, 0 for NULL.
///
/// # Safety
/// `res` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ac_result_rounds(res: *const AcResult) -> usize {
    res.as_ref().map_or(0, |r| r.result.records.len())
}

/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_result_record(res: *const AcResult, index: usize, out: *mut AcRecord) -> AcStatus {
    guard(|| {
        let r = handle(res, "res")?;
        let out = out_ptr(out, "out")?;
        let rec = r.result.records.get(index).ok_or_else(|| {
            fail(
                AcStatus::OutOfRange,
                &format!("round index {index} out of range ({} rounds)", r.result.records.len()),
            )
        })?;
        *out = AcRecord {
            round: rec.round,
            clock: rec.clock,
            loss: rec.loss,
            grad_norm_sq: rec.grad_norm_sq,
            min_grad_norm_sq: rec.min_grad_norm_sq,
            delay_count: rec.delays.len(),
        };
        Ok(())
    })
}

/// Delays consumed by round `index`, copied into `buf` (capacity `cap`).
/// `out_len` receives the number of delays even when the buffer is too small.
///
/// # Safety
/// `res` must be a live handle; `buf` must hold `cap` elements; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_result_delays(
    res: *const AcResult,
    index: usize,
    buf: *mut u64,
    cap: usize,
    out_len: *mut usize,
) -> AcStatus {
    guard(|| {
        let r = handle(res, "res")?;
        let rec = r.result.records.get(index).ok_or_else(|| {
            fail(AcStatus::OutOfRange, &format!("round index {index} out of range"))
        })?;
        fill(&rec.delays, buf, cap, out_len)
    })
}

/// Final model `x_T`, same buffer convention as [`ac_result_delays`].
///
/// # Safety
/// `res` must be a live handle; `buf` must hold `cap` elements; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_result_final_x(
    res: *const AcResult,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> AcStatus {
    guard(|| {
        let r = handle(res, "res")?;
        fill(&r.result.final_x, buf, cap, out_len)
    })
}

/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_result_summary(res: *const AcResult, out: *mut AcSummary) -> AcStatus {
    guard(|| {
        let r = &handle(res, "res")?.result;
        let out = out_ptr(out, "out")?;
        *out = AcSummary {
            rounds: r.records.len() as u64,
            initial_loss: r.initial_loss,
            final_loss: r.final_loss(),
            min_grad_norm_sq: r.min_grad_norm_sq(),
            total_sim_time: r.total_sim_time,
            dispatched: r.jobs.dispatched,
            consumed: r.jobs.consumed,
            in_flight: r.jobs.in_flight,
            queued: r.jobs.queued,
        };
        Ok(())
    })
}

/// The same JSON document `ac_result_write` stores as `summary.json`.
///
/// # Safety
/// `res` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_result_summary_json(res: *const AcResult, out: *mut *mut c_char) -> AcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let r = handle(res, "res")?;
        *out = to_c_string(RunSummary::new(&r.result, &r.config).to_json()?);
        Ok(())
    })
}

/// Writes `rounds.csv` and `summary.json` into `dir`, creating it.
///
/// # Safety
/// `res` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ac_result_write(res: *const AcResult, dir: *const c_char) -> AcStatus {
    guard(|| {
        let r = handle(res, "res")?;
        write_run(&r.result, &r.config, Path::new(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Coordinate-wise clipping of `len` values from `g` into `out` (which may
/// alias `g`). `u = INFINITY` copies unchanged.
///
/// # Safety
/// `g` and `out` must each hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ac_clip(u: f64, g: *const f64, out: *mut f64, len: usize) -> AcStatus {
    guard(|| {
        if len == 0 {
            return Ok(());
        }
        if g.is_null() || out.is_null() {
            return Err(fail(AcStatus::NullPointer, "g or out is NULL"));
        }
        let input = std::slice::from_raw_parts(g, len).to_vec();
        let clipped = asyncclip::clip(u, &input)?;
        ptr::copy_nonoverlapping(clipped.as_ptr(), out, len);
        Ok(())
    })
}
