//! C ABI over the burdenlab core.
//!
//! Every fallible function returns a [`BlStatus`]; on failure the message is
//! available from [`bl_last_error_message`] until the next failing call on
//! the same thread. Models and trajectories are opaque handles released
//! with their `_free` functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use burdenlab::document::ModelDocument;
use burdenlab::dynamics::{self, ConstraintConfig, Enforcement, PathMode, TrajectoryRecord};
use burdenlab::harness::{emit_report, run_experiment, ExperimentConfig, ReportFormat};
use burdenlab::model::DeployedModel;
use burdenlab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Document = 5,
    Run = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlPathMode {
    Uniform = 0,
    Discounted = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlEnforcement {
    Soft = 0,
    Hard = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlConstraintConfig {
    pub w_disp: f64,
    pub w_grow: f64,
    pub threshold: f64,
    pub path_mode: BlPathMode,
    pub alpha: f64,
    pub lambda_path: f64,
    pub r0: f64,
    pub kappa: f64,
    pub r_min: f64,
    pub enforcement: BlEnforcement,
}

impl From<ConstraintConfig> for BlConstraintConfig {
    fn from(c: ConstraintConfig) -> Self {
        BlConstraintConfig {
            w_disp: c.w_disp,
            w_grow: c.w_grow,
            threshold: c.threshold,
            path_mode: match c.path_mode {
                PathMode::Uniform => BlPathMode::Uniform,
                PathMode::Discounted => BlPathMode::Discounted,
            },
            alpha: c.alpha,
            lambda_path: c.lambda_path,
            r0: c.r0,
            kappa: c.kappa,
            r_min: c.r_min,
            enforcement: match c.enforcement {
                Enforcement::Soft => BlEnforcement::Soft,
                Enforcement::Hard => BlEnforcement::Hard,
            },
        }
    }
}

impl From<BlConstraintConfig> for ConstraintConfig {
    fn from(c: BlConstraintConfig) -> Self {
        ConstraintConfig {
            w_disp: c.w_disp,
            w_grow: c.w_grow,
            threshold: c.threshold,
            path_mode: match c.path_mode {
                BlPathMode::Uniform => PathMode::Uniform,
                BlPathMode::Discounted => PathMode::Discounted,
            },
            alpha: c.alpha,
            lambda_path: c.lambda_path,
            r0: c.r0,
            kappa: c.kappa,
            r_min: c.r_min,
            enforcement: match c.enforcement {
                BlEnforcement::Soft => Enforcement::Soft,
                BlEnforcement::Hard => Enforcement::Hard,
            },
        }
    }
}

/// A loaded model document.
pub struct BlModel {
    doc: ModelDocument,
    deployed: DeployedModel,
}

/// A finished rollout.
pub struct BlTrajectory {
    record: TrajectoryRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: BlStatus, msg: impl Into<String>) -> BlStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> BlStatus {
    match e {
        e if e.is_config() => BlStatus::Config,
        Error::Io { .. } => BlStatus::Io,
        Error::Document(_) | Error::Json(_) => BlStatus::Document,
        Error::DimensionMismatch { .. }
        | Error::TokenOutOfVocabulary { .. }
        | Error::EmptySequence
        | Error::NegativeBurden(_) => BlStatus::InvalidArgument,
        _ => BlStatus::Run,
    }
}

fn from_error(e: Error) -> BlStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

fn guard(f: impl FnOnce() -> BlStatus) -> BlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(BlStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, len))
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, BlStatus> {
    if p.is_null() {
        return Err(fail(BlStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(BlStatus::InvalidArgument, "path is not valid UTF-8")),
    }
}

/// Copies `src` into a caller buffer of `capacity` elements.
unsafe fn copy_out(src: &[f64], out: *mut f64, capacity: usize) -> BlStatus {
    if out.is_null() {
        return fail(BlStatus::NullPointer, "output buffer is null");
    }
    if capacity < src.len() {
        return fail(
            BlStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    BlStatus::Ok
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fills `out` with the default constraint configuration.
///
/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn bl_constraint_default(out: *mut BlConstraintConfig) -> BlStatus {
    if out.is_null() {
        return fail(BlStatus::NullPointer, "out is null");
    }
    out.write(ConstraintConfig::default().into());
    BlStatus::Ok
}

unsafe fn config_arg(cfg: *const BlConstraintConfig) -> Result<ConstraintConfig, BlStatus> {
    if cfg.is_null() {
        return Err(fail(BlStatus::NullPointer, "config is null"));
    }
    let c: ConstraintConfig = (*cfg).into();
    c.validate().map_err(from_error)?;
    Ok(c)
}

/// Burden of the transition `h -> h_next`, both of length `n`.
///
/// # Safety
/// `h` and `h_next` must point to `n` readable doubles, `cfg` to a config
/// and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn bl_burden(
    h: *const f64,
    h_next: *const f64,
    n: usize,
    cfg: *const BlConstraintConfig,
    out: *mut f64,
) -> BlStatus {
    guard(|| {
        let cfg = match config_arg(cfg) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let (Some(a), Some(b)) = (slice(h, n), slice(h_next, n)) else {
            return fail(BlStatus::NullPointer, "state pointer is null");
        };
        if out.is_null() {
            return fail(BlStatus::NullPointer, "out is null");
        }
        match dynamics::burden(a, b, &cfg) {
            Ok(v) => {
                out.write(v);
                BlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Load after charging `burden` on top of `load_prev`.
///
/// # Safety
/// `cfg` must point to a config and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn bl_path_load_update(
    load_prev: f64,
    burden: f64,
    cfg: *const BlConstraintConfig,
    out: *mut f64,
) -> BlStatus {
    guard(|| {
        let cfg = match config_arg(cfg) {
            Ok(c) => c,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(BlStatus::NullPointer, "out is null");
        }
        match dynamics::path_load_update(load_prev, burden, &cfg) {
            Ok(v) => {
                out.write(v);
                BlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Radius of the feasible ball at the given load.
///
/// # Safety
/// `cfg` must point to a config and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn bl_feasible_radius(load: f64, cfg: *const BlConstraintConfig, out: *mut f64) -> BlStatus {
    guard(|| {
        let cfg = match config_arg(cfg) {
            Ok(c) => c,
            Err(s) => return s,
        };
        if out.is_null() {
            return fail(BlStatus::NullPointer, "out is null");
        }
        out.write(dynamics::feasible_radius(load, &cfg));
        BlStatus::Ok
    })
}

/// Radially projects `h` (length `n`) into the ball of `radius`, writing
/// `n` values to `out`.
///
/// # Safety
/// `h` must point to `n` readable doubles and `out` to `n` writable ones.
#[no_mangle]
pub unsafe extern "C" fn bl_project(h: *const f64, n: usize, radius: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        if !(radius >= 0.0) {
            return fail(BlStatus::InvalidArgument, "radius must be >= 0");
        }
        let Some(a) = slice(h, n) else {
            return fail(BlStatus::NullPointer, "state pointer is null");
        };
        copy_out(&dynamics::project(a, radius), out, n)
    })
}

/// Loads a model document from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn bl_model_load(path: *const c_char, out: *mut *mut BlModel) -> BlStatus {
    guard(|| {
        if out.is_null() {
            return fail(BlStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ModelDocument::load(&path) {
            Ok(doc) => {
                let deployed = doc.deployed();
                out.write(Box::into_raw(Box::new(BlModel { doc, deployed })));
                BlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`bl_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bl_model_free(model: *mut BlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Hidden size, embedding size and vocabulary of a model.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_model_dims(
    model: *const BlModel,
    hidden: *mut usize,
    embed: *mut usize,
    vocab: *mut usize,
) -> BlStatus {
    if model.is_null() || hidden.is_null() || embed.is_null() || vocab.is_null() {
        return fail(BlStatus::NullPointer, "null argument");
    }
    let d = (*model).deployed.params.dims();
    hidden.write(d.hidden);
    embed.write(d.embed);
    vocab.write(d.vocab);
    BlStatus::Ok
}

/// The constraint yardstick stored with the model.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_model_constraint(model: *const BlModel, out: *mut BlConstraintConfig) -> BlStatus {
    if model.is_null() || out.is_null() {
        return fail(BlStatus::NullPointer, "null argument");
    }
    out.write((*model).doc.constraint.into());
    BlStatus::Ok
}

/// Rolls the model over `len` tokens under its own deployment mode,
/// measured against `cfg` (or the model's stored yardstick when null).
///
/// # Safety
/// `model` must be a live handle, `tokens` must point to `len` values,
/// `cfg` must be null or valid and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn bl_model_rollout(
    model: *const BlModel,
    tokens: *const usize,
    len: usize,
    cfg: *const BlConstraintConfig,
    out: *mut *mut BlTrajectory,
) -> BlStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(BlStatus::NullPointer, "null argument");
        }
        let m = &*model;
        let yard = if cfg.is_null() {
            m.doc.constraint
        } else {
            match config_arg(cfg) {
                Ok(c) => c,
                Err(s) => return s,
            }
        };
        let Some(tokens) = slice(tokens, len) else {
            return fail(BlStatus::NullPointer, "tokens is null");
        };
        match m.deployed.trajectory(&yard, tokens) {
            Ok(record) => {
                out.write(Box::into_raw(Box::new(BlTrajectory { record })));
                BlStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a trajectory. Null is ignored.
///
/// # Safety
/// `traj` must come from [`bl_model_rollout`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bl_trajectory_free(traj: *mut BlTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of steps, or 0 for null.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bl_trajectory_len(traj: *const BlTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.record.len())
}

/// Hidden state after `step` steps (`0..=len`), written to `out`.
///
/// # Safety
/// `traj` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_trajectory_state(
    traj: *const BlTrajectory,
    step: usize,
    out: *mut f64,
    capacity: usize,
) -> BlStatus {
    let Some(t) = traj.as_ref() else {
        return fail(BlStatus::NullPointer, "trajectory is null");
    };
    match t.record.states.get(step) {
        Some(s) => copy_out(s, out, capacity),
        None => fail(BlStatus::InvalidArgument, format!("step {step} beyond trajectory")),
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlSeries {
    Burdens = 0,
    Loads = 1,
    Radii = 2,
}

/// Copies one per-step series (`len` values) into `out`.
///
/// # Safety
/// `traj` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_trajectory_series(
    traj: *const BlTrajectory,
    series: BlSeries,
    out: *mut f64,
    capacity: usize,
) -> BlStatus {
    let Some(t) = traj.as_ref() else {
        return fail(BlStatus::NullPointer, "trajectory is null");
    };
    let src = match series {
        BlSeries::Burdens => &t.record.burdens,
        BlSeries::Loads => &t.record.loads,
        BlSeries::Radii => &t.record.radii,
    };
    copy_out(src, out, capacity)
}

/// Counts of burden and feasibility violations.
///
/// # Safety
/// `traj` must be a live handle and both out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn bl_trajectory_violations(
    traj: *const BlTrajectory,
    burden: *mut usize,
    feasibility: *mut usize,
) -> BlStatus {
    let Some(t) = traj.as_ref() else {
        return fail(BlStatus::NullPointer, "trajectory is null");
    };
    if burden.is_null() || feasibility.is_null() {
        return fail(BlStatus::NullPointer, "out is null");
    }
    burden.write(t.record.burden_violation_count());
    feasibility.write(t.record.feasibility_violation_count());
    BlStatus::Ok
}

/// Runs the experiment described by the config file and writes the report
/// files. `out_dir` overrides the output directory when non-null.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn bl_experiment_run(config_path: *const c_char, out_dir: *const c_char) -> BlStatus {
    guard(|| {
        let path = match path_arg(config_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let mut cfg = match ExperimentConfig::load(&path) {
            Ok(c) => c,
            Err(Error::Io { path, source }) => return fail(BlStatus::Config, format!("{path}: {source}")),
            Err(e) => return from_error(e),
        };
        let dir = if out_dir.is_null() {
            cfg.resolved_output_dir()
        } else {
            match path_arg(out_dir) {
                Ok(p) => p,
                Err(s) => return s,
            }
        };
        cfg.output_dir = dir.clone();
        if std::env::var_os(burdenlab::harness::OUT_ENV).is_some() && !out_dir.is_null() {
            return fail(
                BlStatus::Config,
                "out_dir conflicts with the output directory environment override",
            );
        }
        let bundle = match run_experiment(&cfg) {
            Ok(b) => b,
            Err(e) => return from_error(e),
        };
        match emit_report(&bundle, &dir, ReportFormat::All) {
            Ok(_) => match bundle.seeds.iter().find_map(|s| s.diagnostic.as_ref()) {
                Some(d) => fail(BlStatus::Run, d.clone()),
                None => BlStatus::Ok,
            },
            Err(e) => from_error(e),
        }
    })
}
