//! C ABI over `kgdelta`.
//!
//! Every entry point returns a [`KgStatus`]; on failure the message is kept
//! in a thread-local slot readable through [`kg_last_error_message`].
//! Handles are opaque and must be released with the matching `*_free`.
//! Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::mem::ManuallyDrop;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kgdelta::cli;
use kgdelta::config::{parse_config, RunConfig};
use kgdelta::evolution::{build_operator, DiscreteOperator, StepOptions, Stepper};
use kgdelta::experiments::{bisect_threshold, classify_trajectory, Classification, ClassifyOptions, ShootOptions, Symmetry};
use kgdelta::{field, profiles, variational, Error, GridSpec, PhysParams, State};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgClassification {
    Decays = 0,
    BlowsUp = 1,
    Undetermined = 2,
}

impl From<Classification> for KgClassification {
    fn from(c: Classification) -> Self {
        match c {
            Classification::Decays => KgClassification::Decays,
            Classification::BlowsUp => KgClassification::BlowsUp,
            Classification::Undetermined => KgClassification::Undetermined,
        }
    }
}

/// Opaque physical parameters `(p, alpha, gamma)`.
pub struct KgParams(PhysParams);

/// Opaque uniform grid on `[-L, L]`.
pub struct KgGrid(GridSpec);

/// Opaque validated run configuration.
pub struct KgConfig(RunConfig);

/// Opaque time stepper that owns its state.
pub struct KgSim {
    // Borrows `*op`; released before the operator in Drop.
    stepper: ManuallyDrop<Stepper<'static>>,
    op: *mut DiscreteOperator,
    params: PhysParams,
    grid: GridSpec,
}

impl Drop for KgSim {
    fn drop(&mut self) {
        // SAFETY: `op` came from Box::into_raw in kg_sim_new and nothing
        // borrows it once the stepper is gone.
        unsafe {
            ManuallyDrop::drop(&mut self.stepper);
            drop(Box::from_raw(self.op));
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KgSpectralConstants {
    pub nu: f64,
    pub nu_plus: f64,
    pub nu_minus: f64,
    pub c_q: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KgShot {
    pub classification: KgClassification,
    /// NaN when no certificate fired.
    pub certificate_time: f64,
    pub e_gamma: f64,
    pub k_gamma: f64,
    pub t_end: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KgThreshold {
    pub lambda_star: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub probes: usize,
    pub converged: bool,
    pub monotone: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_for(err: &Error) -> KgStatus {
    match err {
        Error::Parameter(_) | Error::Nonexistence { .. } | Error::Grid(_) | Error::LengthMismatch { .. } | Error::Precondition(_) | Error::ZeroInput => {
            KgStatus::InvalidArgument
        }
        Error::Config { .. } => KgStatus::Config,
        Error::Io(_) => KgStatus::Io,
        _ => KgStatus::Numeric,
    }
}

/// Runs `f`, translating errors and panics into a status code. The error
/// slot is cleared on entry.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> KgStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            KgStatus::Panic
        }
    }
}

struct Failure(KgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_for(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(KgStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(KgStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Length in bytes of the last error message on this thread (0 if none).
#[no_mangle]
pub extern "C" fn kg_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to
/// `cap - 1` bytes) and returns the number of bytes copied.
#[no_mangle]
pub unsafe extern "C" fn kg_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    if buf.is_null() || cap == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let n = e.len().min(cap - 1);
        ptr::copy_nonoverlapping(e.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
        n
    })
}

#[no_mangle]
pub extern "C" fn kg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[no_mangle]
pub unsafe extern "C" fn kg_params_new(p: f64, alpha: f64, gamma: f64, out: *mut *mut KgParams) -> KgStatus {
    guard(|| {
        let params = PhysParams::new(p, alpha, gamma)?;
        write_out(out, Box::into_raw(Box::new(KgParams(params))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn kg_params_free(params: *mut KgParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

#[no_mangle]
pub unsafe extern "C" fn kg_grid_new(half_width: f64, n: usize, out: *mut *mut KgGrid) -> KgStatus {
    guard(|| {
        let grid = kgdelta::make_grid(half_width, n)?;
        write_out(out, Box::into_raw(Box::new(KgGrid(grid))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn kg_grid_free(grid: *mut KgGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of nodes, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn kg_grid_len(grid: *const KgGrid) -> usize {
    grid.as_ref().map(|g| g.0.n()).unwrap_or(0)
}

#[no_mangle]
pub unsafe extern "C" fn kg_grid_spacing(grid: *const KgGrid) -> f64 {
    grid.as_ref().map(|g| g.0.h()).unwrap_or(f64::NAN)
}

#[no_mangle]
pub unsafe extern "C" fn kg_spectral_constants(params: *const KgParams, out: *mut KgSpectralConstants) -> KgStatus {
    guard(|| {
        let sc = profiles::spectral_constants(&deref(params, "params")?.0);
        write_out(
            out,
            KgSpectralConstants {
                nu: sc.nu,
                nu_plus: sc.nu_plus,
                nu_minus: sc.nu_minus,
                c_q: sc.c_q,
            },
            "out",
        )
    })
}

/// Free soliton `Q(x)` for exponent `p`.
#[no_mangle]
pub unsafe extern "C" fn kg_profile_q(x: f64, p: f64, out: *mut f64) -> KgStatus {
    guard(|| write_out(out, profiles::soliton_q(x, p)?, "out"))
}

/// Pinned profile `Q_gamma(x)`; requires `|gamma| < 2`.
#[no_mangle]
pub unsafe extern "C" fn kg_profile_q_gamma(params: *const KgParams, x: f64, out: *mut f64) -> KgStatus {
    guard(|| write_out(out, profiles::soliton_q_gamma(x, &deref(params, "params")?.0)?, "out"))
}

/// Samples the pinned profile on the grid into `out[0..len]`.
#[no_mangle]
pub unsafe extern "C" fn kg_profile_sample_q_gamma(params: *const KgParams, grid: *const KgGrid, out: *mut f64, len: usize) -> KgStatus {
    guard(|| {
        let params = &deref(params, "params")?.0;
        let grid = &deref(grid, "grid")?.0;
        if len != grid.n() {
            return Err(Error::LengthMismatch { expected: grid.n(), got: len }.into());
        }
        let dst = slice_mut(out, len, "out")?;
        for (j, d) in dst.iter_mut().enumerate() {
            *d = profiles::soliton_q_gamma(grid.x(j), params)?;
        }
        Ok(())
    })
}

/// Reference levels `n_gamma` (general sector) and `r_gamma` (even sector).
#[no_mangle]
pub unsafe extern "C" fn kg_reference_levels(params: *const KgParams, n_gamma: *mut f64, r_gamma: *mut f64) -> KgStatus {
    guard(|| {
        let l = variational::reference_levels(&deref(params, "params")?.0)?;
        write_out(n_gamma, l.n_gamma, "n_gamma")?;
        write_out(r_gamma, l.r_gamma, "r_gamma")
    })
}

unsafe fn read_state(grid: &GridSpec, u: *const f64, v: *const f64, len: usize) -> Result<State, Failure> {
    if len != grid.n() {
        return Err(Error::LengthMismatch { expected: grid.n(), got: len }.into());
    }
    let s = State::new(slice(u, len, "u")?.to_vec(), slice(v, len, "v")?.to_vec(), 0.0)?;
    s.check(grid)?;
    Ok(s)
}

/// Creates a stepper from `(u, v)` at `t = 0`. The handle copies the params
/// and grid, so they may be freed afterwards.
#[no_mangle]
pub unsafe extern "C" fn kg_sim_new(
    params: *const KgParams,
    grid: *const KgGrid,
    u: *const f64,
    v: *const f64,
    len: usize,
    dt: f64,
    out: *mut *mut KgSim,
) -> KgStatus {
    guard(|| {
        let params = deref(params, "params")?.0;
        let grid = deref(grid, "grid")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let state = read_state(&grid, u, v, len)?;
        let op = Box::into_raw(Box::new(build_operator(&grid, &params)));
        // SAFETY: the operator lives on the heap until KgSim is dropped, and
        // the stepper is dropped first.
        let op_ref: &'static DiscreteOperator = &*op;
        match Stepper::new(&state, dt, op_ref, &params, StepOptions::default()) {
            Ok(stepper) => {
                out.write(Box::into_raw(Box::new(KgSim {
                    stepper: ManuallyDrop::new(stepper),
                    op,
                    params,
                    grid,
                })));
                Ok(())
            }
            Err(e) => {
                drop(Box::from_raw(op));
                Err(e.into())
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn kg_sim_free(sim: *mut KgSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances `steps` levels. On a numeric failure (blowup cap, non-finite
/// values) the simulation stays at the last valid level.
#[no_mangle]
pub unsafe extern "C" fn kg_sim_advance(sim: *mut KgSim, steps: u64) -> KgStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        for _ in 0..steps {
            sim.stepper.advance()?;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn kg_sim_time(sim: *const KgSim) -> f64 {
    sim.as_ref().map(|s| s.stepper.time()).unwrap_or(f64::NAN)
}

/// Copies the current `(u, du/dt)` into caller buffers of length `len`.
#[no_mangle]
pub unsafe extern "C" fn kg_sim_copy_state(sim: *const KgSim, u_out: *mut f64, v_out: *mut f64, len: usize) -> KgStatus {
    guard(|| {
        let sim = deref(sim, "sim")?;
        if len != sim.grid.n() {
            return Err(Error::LengthMismatch {
                expected: sim.grid.n(),
                got: len,
            }
            .into());
        }
        let s = sim.stepper.state();
        slice_mut(u_out, len, "u_out")?.copy_from_slice(&s.u);
        slice_mut(v_out, len, "v_out")?.copy_from_slice(&s.v);
        Ok(())
    })
}

/// Energy `E_gamma` of the current state.
#[no_mangle]
pub unsafe extern "C" fn kg_sim_energy(sim: *const KgSim, out: *mut f64) -> KgStatus {
    guard(|| {
        let sim = deref(sim, "sim")?;
        let e = field::energy_e_gamma(&sim.stepper.state(), &sim.params, &sim.grid)?;
        write_out(out, e, "out")
    })
}

/// Runs `(u, v)` until a blowup or decay certificate fires or `t_max`
/// passes. `even` selects the even-sector level.
#[no_mangle]
pub unsafe extern "C" fn kg_classify(
    params: *const KgParams,
    grid: *const KgGrid,
    u: *const f64,
    v: *const f64,
    len: usize,
    dt: f64,
    t_max: f64,
    even: bool,
    out: *mut KgShot,
) -> KgStatus {
    guard(|| {
        let params = &deref(params, "params")?.0;
        let grid = &deref(grid, "grid")?.0;
        let state = read_state(grid, u, v, len)?;
        let sym = if even { Symmetry::Even } else { Symmetry::None };
        let o = classify_trajectory(&state, params, grid, &ClassifyOptions::new(dt, t_max, sym))?;
        let (e, k) = o.certificate.map(|c| (c.e_gamma, c.k_gamma)).unwrap_or((f64::NAN, f64::NAN));
        write_out(
            out,
            KgShot {
                classification: o.classification.into(),
                certificate_time: o.certificate_time,
                e_gamma: e,
                k_gamma: k,
                t_end: o.summary.t_end,
            },
            "out",
        )
    })
}

/// Bisects the family `lambda -> (1 + lambda)(Q(. - z) + varsigma Q(. + z))`
/// for the blowup/decay threshold on `[lambda_lo, lambda_hi]`.
#[no_mangle]
pub unsafe extern "C" fn kg_shoot(
    params: *const KgParams,
    grid: *const KgGrid,
    varsigma: u8,
    z: f64,
    dt: f64,
    lambda_lo: f64,
    lambda_hi: f64,
    tol: f64,
    t_max: f64,
    out: *mut KgThreshold,
) -> KgStatus {
    guard(|| {
        let params = &deref(params, "params")?.0;
        let grid = &deref(grid, "grid")?.0;
        if varsigma > 1 {
            return Err(invalid(format!("varsigma must be 0 or 1, got {varsigma}")));
        }
        let mut o = ShootOptions::new(varsigma, z, dt);
        o.lambda_lo = lambda_lo;
        o.lambda_hi = lambda_hi;
        o.tol = tol;
        o.classify.t_max = t_max;
        let r = bisect_threshold(params, grid, &o)?;
        write_out(
            out,
            KgThreshold {
                lambda_star: r.lambda_star,
                bracket_lo: r.bracket.0,
                bracket_hi: r.bracket.1,
                probes: r.probes.len(),
                converged: r.converged,
                monotone: r.monotone,
            },
            "out",
        )
    })
}

/// Parses `key = value` configuration text.
#[no_mangle]
pub unsafe extern "C" fn kg_config_parse(text: *const c_char, out: *mut *mut KgConfig) -> KgStatus {
    guard(|| {
        let cfg = parse_config(string(text, "text")?)?;
        write_out(out, Box::into_raw(Box::new(KgConfig(cfg))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn kg_config_free(cfg: *mut KgConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs a `kg` subcommand (`profile`, `simulate`, `shoot`, `track`,
/// `variational`, `check`) and stores the process exit code it would have
/// produced in `exit_code`. Returns `Ok` whenever the run itself was
/// attempted; a nonzero exit code leaves its reason in the error slot.
#[no_mangle]
pub unsafe extern "C" fn kg_run(name: *const c_char, cfg: *const KgConfig, out_dir: *const c_char, exit_code: *mut i32) -> KgStatus {
    guard(|| {
        let name = string(name, "name")?;
        let cfg = &deref(cfg, "cfg")?.0;
        let dir = string(out_dir, "out_dir")?;
        if exit_code.is_null() {
            return Err(null("exit_code"));
        }
        let r = cli::run_subcommand(name, cfg, Path::new(dir));
        exit_code.write(r.exit_code);
        if let Some(msg) = r.message {
            set_error(msg);
        }
        Ok(())
    })
}
