//! C ABI over the evtrack pipeline.
//!
//! Every fallible call returns an [`EvtStatus`]; on failure the message is
//! kept per thread and read back with [`evt_last_error`]. Handles are opaque
//! and owned by the caller until passed to their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use evtrack::camera::CameraIntrinsics;
use evtrack::config::{ConfigError, DetectorKind, RunConfig};
use evtrack::metrics::{evaluate, MetricsError, MetricsReport};
use evtrack::pipeline::{cmd_evaluate, cmd_simulate, cmd_track, write_manifest, PipelineError};
use evtrack::pose::{solve_epnp, PoseError};
use evtrack::se3::{PoseSE3, Trajectory, TrajectoryError};
use nalgebra::{Vector2, Vector3};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// File missing, unreadable or malformed.
    Io = 3,
    /// Configuration text did not parse or failed validation.
    Config = 4,
    /// Too few live keypoints; partial outputs were written.
    TrackingLost = 5,
    /// Geometry admits no unique pose.
    Degenerate = 6,
    /// Any other pipeline failure, including a caught panic.
    Internal = 7,
}

/// Run configuration.
pub struct EvtConfig {
    inner: RunConfig,
}

/// Timestamped pose sequence.
pub struct EvtTrajectory {
    inner: Trajectory,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvtCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Object-to-camera transform; `rotation` is row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvtPose {
    pub t_us: u64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvtMetrics {
    pub r_rel_deg_per_s: f64,
    pub t_rel_cm_per_s: f64,
    pub m: u64,
    pub delta: u64,
    pub dt_mean_s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvtDetector {
    Oracle = 0,
    Density = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    // interior NULs would truncate the C string; replace them
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: EvtStatus, msg: impl std::fmt::Display) -> EvtStatus {
    set_error(&msg.to_string());
    status
}

/// Clears the error slot, runs `f`, and turns panics into `Internal`.
fn guard(f: impl FnOnce() -> EvtStatus) -> EvtStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(EvtStatus::Internal, format!("panic: {msg}"))
        }
    }
}

fn config_status(e: &ConfigError) -> EvtStatus {
    match e {
        ConfigError::Read { .. } => EvtStatus::Io,
        _ => EvtStatus::Config,
    }
}

fn pose_status(e: &PoseError) -> EvtStatus {
    match e {
        PoseError::TrackingLost { .. } => EvtStatus::TrackingLost,
        PoseError::Degenerate | PoseError::BehindCamera | PoseError::AmbiguousAssignment { .. } => {
            EvtStatus::Degenerate
        }
        PoseError::InsufficientCorrespondences(_) | PoseError::LengthMismatch { .. } | PoseError::InvalidGate(_) => {
            EvtStatus::InvalidArgument
        }
    }
}

fn pipeline_status(e: &PipelineError) -> EvtStatus {
    match e {
        PipelineError::Config(c) => config_status(c),
        PipelineError::Io { .. } | PipelineError::EventFile { .. } | PipelineError::TrajectoryFile { .. } => {
            EvtStatus::Io
        }
        PipelineError::Pose(p) => pose_status(p),
        PipelineError::SensorMismatch { .. } | PipelineError::TooShort(_) => EvtStatus::InvalidArgument,
        _ => EvtStatus::Internal,
    }
}

fn trajectory_status(e: &TrajectoryError) -> EvtStatus {
    match e {
        TrajectoryError::Io(_) | TrajectoryError::Parse { .. } => EvtStatus::Io,
        _ => EvtStatus::InvalidArgument,
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, EvtStatus> {
    if path.is_null() {
        return Err(fail(EvtStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(EvtStatus::InvalidArgument, "path is not UTF-8"))
}

fn metrics_out(report: &MetricsReport) -> EvtMetrics {
    EvtMetrics {
        r_rel_deg_per_s: report.r_rel_deg_per_s,
        t_rel_cm_per_s: report.t_rel_cm_per_s,
        m: report.m as u64,
        delta: report.delta as u64,
        dt_mean_s: report.dt_mean_s,
    }
}

fn pose_out(t_us: u64, pose: &PoseSE3) -> EvtPose {
    let mut rotation = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            rotation[r * 3 + c] = pose.rotation[(r, c)];
        }
    }
    EvtPose {
        t_us,
        rotation,
        translation: [pose.translation.x, pose.translation.y, pose.translation.z],
    }
}

/// Message of the last failed call on this thread; empty after success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn evt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn evt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration (the reference cuboid sweep).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn evt_config_default(out: *mut *mut EvtConfig) -> EvtStatus {
    guard(|| {
        if out.is_null() {
            return fail(EvtStatus::NullPointer, "out is null");
        }
        *out = Box::into_raw(Box::new(EvtConfig {
            inner: RunConfig::default(),
        }));
        EvtStatus::Ok
    })
}

/// Parses and validates TOML configuration text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evt_config_from_toml(toml: *const c_char, out: *mut *mut EvtConfig) -> EvtStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return fail(EvtStatus::NullPointer, "argument is null");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(EvtStatus::InvalidArgument, "config text is not UTF-8");
        };
        match RunConfig::from_toml_str(text).and_then(|c| c.validate().map(|()| c)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(EvtConfig { inner }));
                EvtStatus::Ok
            }
            Err(e) => fail(config_status(&e), e),
        }
    })
}

/// Loads and validates a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evt_config_load(path: *const c_char, out: *mut *mut EvtConfig) -> EvtStatus {
    guard(|| {
        if out.is_null() {
            return fail(EvtStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match RunConfig::load(&path).and_then(|c| c.validate().map(|()| c)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(EvtConfig { inner }));
                EvtStatus::Ok
            }
            Err(e) => fail(config_status(&e), e),
        }
    })
}

/// # Safety
/// `config` must come from an `evt_config_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evt_config_free(config: *mut EvtConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn evt_config_set_seed(config: *mut EvtConfig, seed: u64) -> EvtStatus {
    guard(|| match config.as_mut() {
        Some(c) => {
            c.inner.seed = seed;
            EvtStatus::Ok
        }
        None => fail(EvtStatus::NullPointer, "config is null"),
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn evt_config_set_delta(config: *mut EvtConfig, delta: u64) -> EvtStatus {
    guard(|| match config.as_mut() {
        None => fail(EvtStatus::NullPointer, "config is null"),
        Some(_) if delta == 0 => fail(EvtStatus::InvalidArgument, "delta must be at least 1"),
        Some(c) => {
            c.inner.evaluation.delta = delta as usize;
            EvtStatus::Ok
        }
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn evt_config_set_detector(config: *mut EvtConfig, detector: EvtDetector) -> EvtStatus {
    guard(|| match config.as_mut() {
        Some(c) => {
            c.inner.tracking.detector = match detector {
                EvtDetector::Oracle => DetectorKind::Oracle,
                EvtDetector::Density => DetectorKind::Density,
            };
            EvtStatus::Ok
        }
        None => fail(EvtStatus::NullPointer, "config is null"),
    })
}

/// Sets the directory that receives every output file.
///
/// # Safety
/// `config` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn evt_config_set_output(config: *mut EvtConfig, dir: *const c_char) -> EvtStatus {
    guard(|| {
        let Some(c) = config.as_mut() else {
            return fail(EvtStatus::NullPointer, "config is null");
        };
        match path_arg(dir) {
            Ok(p) => {
                c.inner.paths.output = p;
                EvtStatus::Ok
            }
            Err(s) => s,
        }
    })
}

unsafe fn with_config(config: *const EvtConfig, f: impl FnOnce(&RunConfig) -> EvtStatus) -> EvtStatus {
    guard(|| match config.as_ref() {
        Some(c) => f(&c.inner),
        None => fail(EvtStatus::NullPointer, "config is null"),
    })
}

/// Renders events and truth into the output directory, plus a manifest.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn evt_simulate(config: *const EvtConfig) -> EvtStatus {
    with_config(config, |c| {
        match cmd_simulate(c).and_then(|outputs| write_manifest(c, "simulate", &outputs)) {
            Ok(_) => EvtStatus::Ok,
            Err(e) => fail(pipeline_status(&e), e),
        }
    })
}

/// Tracks the recorded stream in the output directory. On `TrackingLost`
/// the partial pose file and track log are still written.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn evt_track(config: *const EvtConfig) -> EvtStatus {
    with_config(config, |c| {
        let (outputs, out) = match cmd_track(c) {
            Ok(v) => v,
            Err(e) => return fail(pipeline_status(&e), e),
        };
        if let Err(e) = write_manifest(c, "track", &outputs) {
            return fail(pipeline_status(&e), e);
        }
        match out.lost {
            Some(e) => fail(EvtStatus::TrackingLost, e),
            None => EvtStatus::Ok,
        }
    })
}

/// Evaluates the estimate in the output directory against the truth.
///
/// # Safety
/// `config` must be a live handle; `out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn evt_evaluate(config: *const EvtConfig, out: *mut EvtMetrics) -> EvtStatus {
    with_config(config, |c| {
        let result = cmd_evaluate(c).and_then(|(outputs, report)| {
            write_manifest(c, "evaluate", &outputs)?;
            Ok(report)
        });
        match result {
            Ok(report) => {
                if let Some(o) = out.as_mut() {
                    *o = metrics_out(&report);
                }
                EvtStatus::Ok
            }
            Err(e) => fail(pipeline_status(&e), e),
        }
    })
}

/// Loads a pose CSV (`t_us,tx,ty,tz,qw,qx,qy,qz`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evt_trajectory_load(path: *const c_char, out: *mut *mut EvtTrajectory) -> EvtStatus {
    guard(|| {
        if out.is_null() {
            return fail(EvtStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Trajectory::load(Path::new(&path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(EvtTrajectory { inner }));
                EvtStatus::Ok
            }
            Err(e) => fail(trajectory_status(&e), format!("{}: {e}", path.display())),
        }
    })
}

/// # Safety
/// `traj` must come from `evt_trajectory_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evt_trajectory_free(traj: *mut EvtTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of poses; 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evt_trajectory_len(traj: *const EvtTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.len())
}

/// # Safety
/// `traj` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn evt_trajectory_get(traj: *const EvtTrajectory, index: usize, out: *mut EvtPose) -> EvtStatus {
    guard(|| {
        let (Some(t), Some(o)) = (traj.as_ref(), out.as_mut()) else {
            return fail(EvtStatus::NullPointer, "argument is null");
        };
        match t.inner.samples().get(index) {
            Some(s) => {
                *o = pose_out(s.t_us, &s.pose);
                EvtStatus::Ok
            }
            None => fail(
                EvtStatus::InvalidArgument,
                format!("index {index} out of range for {} poses", t.inner.len()),
            ),
        }
    })
}

/// Relative pose error of `estimate` against `truth` at step `delta`.
///
/// # Safety
/// Both handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn evt_trajectory_evaluate(
    truth: *const EvtTrajectory,
    estimate: *const EvtTrajectory,
    delta: usize,
    out: *mut EvtMetrics,
) -> EvtStatus {
    guard(|| {
        let (Some(q), Some(p), Some(o)) = (truth.as_ref(), estimate.as_ref(), out.as_mut()) else {
            return fail(EvtStatus::NullPointer, "argument is null");
        };
        match evaluate(&q.inner, &p.inner, delta) {
            Ok((report, _)) => {
                *o = metrics_out(&report);
                EvtStatus::Ok
            }
            Err(e @ MetricsError::Io(_)) => fail(EvtStatus::Io, e),
            Err(e) => fail(EvtStatus::InvalidArgument, e),
        }
    })
}

/// Pose from `n` correspondences: `points_2d` holds `n` (u, v) pairs,
/// `points_3d` holds `n` (x, y, z) object-frame triples.
///
/// # Safety
/// `points_2d` must point to `2n` and `points_3d` to `3n` readable doubles;
/// `camera` and `out` must be valid; `rms` may be null.
#[no_mangle]
pub unsafe extern "C" fn evt_solve_epnp(
    points_2d: *const f64,
    points_3d: *const f64,
    n: usize,
    camera: *const EvtCamera,
    out: *mut EvtPose,
    rms: *mut f64,
) -> EvtStatus {
    guard(|| {
        if points_2d.is_null() || points_3d.is_null() || out.is_null() {
            return fail(EvtStatus::NullPointer, "argument is null");
        }
        let Some(c) = camera.as_ref() else {
            return fail(EvtStatus::NullPointer, "camera is null");
        };
        let cam = match CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height) {
            Ok(cam) => cam,
            Err(e) => return fail(EvtStatus::InvalidArgument, e),
        };
        let uv = std::slice::from_raw_parts(points_2d, 2 * n);
        let xyz = std::slice::from_raw_parts(points_3d, 3 * n);
        let p2: Vec<Vector2<f64>> = uv.chunks_exact(2).map(|p| Vector2::new(p[0], p[1])).collect();
        let p3: Vec<Vector3<f64>> = xyz.chunks_exact(3).map(|p| Vector3::new(p[0], p[1], p[2])).collect();
        match solve_epnp(&p2, &p3, &cam) {
            Ok(sol) => {
                *out = pose_out(0, &sol.pose);
                if let Some(r) = rms.as_mut() {
                    *r = sol.rms;
                }
                EvtStatus::Ok
            }
            Err(e) => fail(pose_status(&e), e),
        }
    })
}
