//! C ABI for the alignment-dynamics library: opaque handles, status codes,
//! and a thread-local last-error message. The committed header
//! `include/flocklab.h` is regenerated on every build.
//!
//! Conventions: every function returns [`FlStatus`]; `FL_STATUS_OK` is 0.
//! On any failure the per-thread message retrieved by
//! [`fl_last_error_message`] describes the problem. Out-parameters are
//! written only on success. Handles are freed exactly once by their `_free`
//! function; strings returned through `char**` out-parameters are freed by
//! [`fl_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use flocklab::analytics::diameters;
use flocklab::config::{parse_config, SimConfig};
use flocklab::ensemble::AtomEnsemble;
use flocklab::runner::{run_with_threads, RunMode};
use flocklab::sim::{simulate, Trajectory};
use flocklab::Error;

/// Result code of every API call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument violated a documented precondition.
    InvalidArgument = 3,
    /// The operation is defined in a narrower regime than requested.
    Unsupported = 4,
    /// Configuration parsing or validation failed.
    InvalidConfig = 5,
    /// An I/O operation failed.
    Io = 6,
    /// The integrator produced a non-finite state.
    BlowUp = 7,
    /// A buffer was too small for the requested data.
    BufferTooSmall = 8,
    /// An index was out of range.
    OutOfRange = 9,
    /// The library panicked; the handle involved must be considered
    /// poisoned and only freed.
    Panic = 10,
}

/// Analysis mode executed by [`fl_run`], mirroring the CLI subcommands.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlRunMode {
    Simulate = 0,
    Diagnose = 1,
    Reconstruct = 2,
    Threshold = 3,
    Meanfield = 4,
}

/// A validated run configuration (opaque).
pub struct FlConfig {
    inner: SimConfig,
}

/// A completed in-memory simulation (opaque): the sampled trajectory
/// together with the ensemble that produced it.
pub struct FlTrajectory {
    ensemble: AtomEnsemble,
    traj: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().map(|b| if b == 0 { b' ' } else { b }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes replaced");
    });
}

fn status_of(err: &Error) -> FlStatus {
    match err {
        Error::Argument(_) => FlStatus::InvalidArgument,
        Error::Unsupported(_) => FlStatus::Unsupported,
        Error::Config(_) | Error::Json(_) => FlStatus::InvalidConfig,
        Error::Io(_) => FlStatus::Io,
        Error::BlowUp { .. } => FlStatus::BlowUp,
    }
}

fn fail(err: &Error) -> FlStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn fail_with(status: FlStatus, msg: &str) -> FlStatus {
    set_last_error(msg);
    status
}

/// Runs `body` with panics converted to [`FlStatus::Panic`].
fn guarded(body: impl FnOnce() -> FlStatus) -> FlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".to_string());
            fail_with(FlStatus::Panic, &format!("internal panic: {msg}"))
        }
    }
}

/// Reads a C string argument, reporting null and encoding failures.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, FlStatus> {
    if ptr.is_null() {
        return Err(fail_with(
            FlStatus::NullPointer,
            &format!("{what} must not be null"),
        ));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        fail_with(
            FlStatus::InvalidUtf8,
            &format!("{what} must be valid UTF-8"),
        )
    })
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FlStatus {
    if out.is_null() {
        return fail_with(FlStatus::NullPointer, &format!("{what} must not be null"));
    }
    out.write(value);
    FlStatus::Ok
}

/// Library version as a static null-terminated string; never freed by the
/// caller.
#[no_mangle]
pub extern "C" fn fl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on the calling thread, as a
/// null-terminated string.
///
/// The pointer stays valid until the next failing call on the same thread;
/// it is never null (initially the empty string) and is never freed by the
/// caller.
#[no_mangle]
pub extern "C" fn fl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parses a JSON configuration (which may extend a preset via its `preset`
/// key) into a validated handle.
///
/// # Safety
///
/// `json` must be a valid null-terminated string; `out` must be a valid
/// pointer. On success `*out` owns the handle and must be released with
/// [`fl_config_free`].
#[no_mangle]
pub unsafe extern "C" fn fl_config_parse(
    json: *const c_char,
    out: *mut *mut FlConfig,
) -> FlStatus {
    guarded(|| {
        let text = match read_str(json, "json") {
            Ok(t) => t,
            Err(status) => return status,
        };
        match parse_config(text) {
            Ok(inner) => {
                let handle = Box::into_raw(Box::new(FlConfig { inner }));
                write_out(out, handle, "out")
            }
            Err(e) => fail(&e),
        }
    })
}

/// Expands a built-in scenario (for example `"two-body-p2"`) into a
/// configuration handle.
///
/// # Safety
///
/// As [`fl_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn fl_config_preset(
    name: *const c_char,
    out: *mut *mut FlConfig,
) -> FlStatus {
    guarded(|| {
        let name = match read_str(name, "name") {
            Ok(n) => n,
            Err(status) => return status,
        };
        match SimConfig::from_preset(name) {
            Ok(inner) => {
                let handle = Box::into_raw(Box::new(FlConfig { inner }));
                write_out(out, handle, "out")
            }
            Err(e) => fail(&e),
        }
    })
}

/// Overrides the seed of a configuration.
///
/// # Safety
///
/// `config` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fl_config_set_seed(config: *mut FlConfig, seed: u64) -> FlStatus {
    guarded(|| {
        let Some(config) = config.as_mut() else {
            return fail_with(FlStatus::NullPointer, "config must not be null");
        };
        config.inner.seed = seed;
        FlStatus::Ok
    })
}

/// Overrides the artifact directory of a configuration.
///
/// # Safety
///
/// `config` must be a live handle; `path` a valid null-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fl_config_set_out_dir(
    config: *mut FlConfig,
    path: *const c_char,
) -> FlStatus {
    guarded(|| {
        let Some(config) = config.as_mut() else {
            return fail_with(FlStatus::NullPointer, "config must not be null");
        };
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        config.inner.out_dir = path.to_string();
        FlStatus::Ok
    })
}

/// Serializes the expanded configuration as pretty JSON.
///
/// # Safety
///
/// `config` must be a live handle; `out` a valid pointer. On success `*out`
/// is a freshly allocated string released with [`fl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fl_config_to_json(
    config: *const FlConfig,
    out: *mut *mut c_char,
) -> FlStatus {
    guarded(|| {
        let Some(config) = config.as_ref() else {
            return fail_with(FlStatus::NullPointer, "config must not be null");
        };
        let text = flocklab::runner::dry_run_text(&config.inner);
        match CString::new(text) {
            Ok(s) => write_out(out, s.into_raw(), "out"),
            Err(_) => fail_with(FlStatus::InvalidArgument, "configuration contains NUL"),
        }
    })
}

/// Releases a configuration handle; a null pointer is a no-op.
///
/// # Safety
///
/// `config` must be null or a live handle, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fl_config_free(config: *mut FlConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Executes a configuration in the given mode, writing artifacts under its
/// output directory (exactly what the CLI subcommands do). `threads = 0`
/// uses one worker per core. On success `*summary` holds the headline
/// `key=value` lines joined by newlines.
///
/// # Safety
///
/// `config` must be a live handle; `summary` a valid pointer. On success
/// `*summary` is released with [`fl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fl_run(
    config: *const FlConfig,
    mode: FlRunMode,
    threads: usize,
    summary: *mut *mut c_char,
) -> FlStatus {
    guarded(|| {
        let Some(config) = config.as_ref() else {
            return fail_with(FlStatus::NullPointer, "config must not be null");
        };
        let mode = match mode {
            FlRunMode::Simulate => RunMode::Simulate,
            FlRunMode::Diagnose => RunMode::Diagnose,
            FlRunMode::Reconstruct => RunMode::Reconstruct,
            FlRunMode::Threshold => RunMode::Threshold,
            FlRunMode::Meanfield => RunMode::Meanfield,
        };
        let pool = if threads == 0 { None } else { Some(threads) };
        match run_with_threads(&config.inner, mode, pool) {
            Ok(s) => {
                let text = s.lines.join("\n");
                match CString::new(text) {
                    Ok(s) => write_out(summary, s.into_raw(), "summary"),
                    Err(_) => fail_with(FlStatus::InvalidArgument, "summary contains NUL"),
                }
            }
            Err(e) => fail(&e),
        }
    })
}

/// Integrates a configuration in memory (no files written) and returns the
/// sampled trajectory.
///
/// # Safety
///
/// `config` must be a live handle; `out` a valid pointer. On success `*out`
/// owns the handle and must be released with [`fl_trajectory_free`].
#[no_mangle]
pub unsafe extern "C" fn fl_simulate(
    config: *const FlConfig,
    out: *mut *mut FlTrajectory,
) -> FlStatus {
    guarded(|| {
        let Some(config) = config.as_ref() else {
            return fail_with(FlStatus::NullPointer, "config must not be null");
        };
        let run = || -> flocklab::Result<FlTrajectory> {
            let cfg = &config.inner;
            cfg.validate()?;
            let (ensemble, u0) = cfg.load_system()?;
            let opts = cfg.sim_options(&ensemble, &u0)?;
            let traj = simulate(&ensemble, &u0, &cfg.kernel, &cfg.coupling()?, &opts)?;
            Ok(FlTrajectory { ensemble, traj })
        };
        match run() {
            Ok(handle) => write_out(out, Box::into_raw(Box::new(handle)), "out"),
            Err(e) => fail(&e),
        }
    })
}

/// Number of atoms in a trajectory's ensemble.
///
/// # Safety
///
/// `traj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fl_trajectory_n_atoms(traj: *const FlTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.ensemble.n())
}

/// Spatial dimension of a trajectory.
///
/// # Safety
///
/// `traj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fl_trajectory_dim(traj: *const FlTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.dim)
}

/// Number of retained samples (the initial and final states always
/// included).
///
/// # Safety
///
/// `traj` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fl_trajectory_n_samples(traj: *const FlTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.samples.len())
}

/// Copies sample `k` into caller buffers: its time, positions, and
/// velocities (`n·dim` doubles each). Either buffer pointer may be null to
/// skip that field.
///
/// # Safety
///
/// `traj` must be a live handle; non-null buffers must hold at least `cap`
/// doubles; `t` must be a valid pointer or null.
#[no_mangle]
pub unsafe extern "C" fn fl_trajectory_sample(
    traj: *const FlTrajectory,
    k: usize,
    t: *mut f64,
    eta: *mut f64,
    vel: *mut f64,
    cap: usize,
) -> FlStatus {
    guarded(|| {
        let Some(handle) = traj.as_ref() else {
            return fail_with(FlStatus::NullPointer, "traj must not be null");
        };
        let Some(sample) = handle.traj.samples.get(k) else {
            return fail_with(
                FlStatus::OutOfRange,
                &format!(
                    "sample {k} out of range ({} retained)",
                    handle.traj.samples.len()
                ),
            );
        };
        let state = &sample.state;
        let need = state.eta.len();
        if (!eta.is_null() || !vel.is_null()) && cap < need {
            return fail_with(
                FlStatus::BufferTooSmall,
                &format!("buffers hold {cap} doubles, {need} required"),
            );
        }
        if !t.is_null() {
            t.write(state.t);
        }
        if !eta.is_null() {
            std::ptr::copy_nonoverlapping(state.eta.as_ptr(), eta, need);
        }
        if !vel.is_null() {
            std::ptr::copy_nonoverlapping(state.vel.as_ptr(), vel, need);
        }
        FlStatus::Ok
    })
}

/// Position and velocity diameters of sample `k`.
///
/// # Safety
///
/// `traj` must be a live handle; `d_eta` and `d_v` must be valid pointers
/// or null.
#[no_mangle]
pub unsafe extern "C" fn fl_trajectory_sample_diameters(
    traj: *const FlTrajectory,
    k: usize,
    d_eta: *mut f64,
    d_v: *mut f64,
) -> FlStatus {
    guarded(|| {
        let Some(handle) = traj.as_ref() else {
            return fail_with(FlStatus::NullPointer, "traj must not be null");
        };
        let Some(sample) = handle.traj.samples.get(k) else {
            return fail_with(
                FlStatus::OutOfRange,
                &format!(
                    "sample {k} out of range ({} retained)",
                    handle.traj.samples.len()
                ),
            );
        };
        let (de, dv) = diameters(&sample.state);
        if !d_eta.is_null() {
            d_eta.write(de);
        }
        if !d_v.is_null() {
            d_v.write(dv);
        }
        FlStatus::Ok
    })
}

/// Releases a trajectory handle; a null pointer is a no-op.
///
/// # Safety
///
/// `traj` must be null or a live handle, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fl_trajectory_free(traj: *mut FlTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Runs the built-in verification suite. On success `*report` holds one
/// line per check and `*failed` the number of failed checks (the call
/// itself succeeds even when checks fail).
///
/// # Safety
///
/// `report` and `failed` must be valid pointers. On success `*report` is
/// released with [`fl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fl_verify(report: *mut *mut c_char, failed: *mut usize) -> FlStatus {
    guarded(|| {
        if failed.is_null() {
            return fail_with(FlStatus::NullPointer, "failed must not be null");
        }
        let outcomes = flocklab::accept::run_all();
        let mut lines = Vec::with_capacity(outcomes.len());
        let mut bad = 0usize;
        for o in &outcomes {
            let tag = if o.passed { "PASS" } else { "FAIL" };
            lines.push(format!("[{tag}] criterion {:02} {} — {}", o.id, o.name, o.detail));
            if !o.passed {
                bad += 1;
            }
        }
        match CString::new(lines.join("\n")) {
            Ok(s) => {
                let status = write_out(report, s.into_raw(), "report");
                if status == FlStatus::Ok {
                    failed.write(bad);
                }
                status
            }
            Err(_) => fail_with(FlStatus::InvalidArgument, "report contains NUL"),
        }
    })
}

/// Releases a string returned by this library; a null pointer is a no-op.
///
/// # Safety
///
/// `s` must be null or a string obtained from this library, and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
