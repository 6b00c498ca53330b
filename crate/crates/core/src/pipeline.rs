//! Simulate, track and evaluate, with on-disk artifacts and a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{hex, ConfigError, DetectorKind, RunConfig};
use crate::detect::{detect_density_peaks, DensityPeakParams, KeypointDetector, KeypointSet, OracleDetector};
use crate::events::{build_time_surfaces, read_events, write_events, EventError, EventStream, Region, TimeWindow};
use crate::metrics::{evaluate, write_step_errors, MetricsError, MetricsReport};
use crate::pose::{initialize_correspondence, track_pose, CorrespondenceTable, PoseError};
use crate::se3::{PoseSE3, TimedPose, Trajectory, TrajectoryError};
use crate::sim::{project_keypoints, render_events, SimError, SimOutput};
use crate::tracker::{build_local_surfaces, save_track_log, track_step, KeypointState, TrackRecord, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    EventFile { path: PathBuf, source: EventError },
    #[error("{path}: {source}")]
    TrajectoryFile { path: PathBuf, source: TrajectoryError },
    #[error("sequence too short: {0} us covers no full tracking window")]
    TooShort(u64),
    #[error("event sensor {events:?} differs from camera {camera:?}")]
    SensorMismatch { events: (u32, u32), camera: (u32, u32) },
}

impl PipelineError {
    /// Whether the failure is a loss of track rather than bad input.
    pub fn is_tracking_lost(&self) -> bool {
        matches!(self, PipelineError::Pose(PoseError::TrackingLost { .. }))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn simulate(config: &RunConfig) -> Result<SimOutput, PipelineError> {
    config.validate()?;
    let model = config.scene.model()?;
    let traj = config.motion.trajectory()?;
    Ok(render_events(
        &model,
        &traj,
        &config.camera,
        config.contrast()?,
        &config.sim_params(),
    )?)
}

#[derive(Debug, Clone)]
pub struct TrackingOutput {
    /// Poses at window midpoints; partial when tracking was lost.
    pub estimate: Vec<TimedPose>,
    pub records: Vec<TrackRecord>,
    /// Windows whose solution was rejected by the step gate.
    pub flagged_windows: usize,
    /// Set when the run ended early.
    pub lost: Option<PoseError>,
}

impl TrackingOutput {
    pub fn trajectory(&self) -> Result<Trajectory, TrajectoryError> {
        Trajectory::new(self.estimate.clone())
    }
}

/// Keypoints for the first window: detection, semantic binding and
/// an initial velocity from the known initial motion.
fn initialize(
    config: &RunConfig,
    events: &EventStream,
    truth: &Trajectory,
    window: TimeWindow,
) -> Result<(Vec<KeypointState>, CorrespondenceTable), PipelineError> {
    let model = config.scene.model()?;
    let cam = &config.camera;
    let params = &config.tracking.tracker;
    let t_mid = window.midpoint_us();
    let prior = truth.sample_at(t_mid)?;
    let surface = build_time_surfaces(
        &events.events,
        window,
        Region::full(events.width, events.height),
        params.blur_sigma,
    )?;
    let (detected, prior_for_binding): (KeypointSet, Option<&PoseSE3>) = match config.tracking.detector {
        DetectorKind::Oracle => (
            OracleDetector {
                model: model.clone(),
                pose: prior,
                camera: *cam,
            }
            .detect(&surface),
            None,
        ),
        DetectorKind::Density => {
            let peaks = DensityPeakParams {
                k: model.len(),
                ..DensityPeakParams::default()
            };
            (detect_density_peaks(&surface, &peaks), Some(&prior))
        }
    };
    let binding = initialize_correspondence(&detected, &model, cam, prior_for_binding)?;

    // image velocity of each model keypoint over the first half window, scaled to px/window
    let start = truth.sample_at(window.start_us)?;
    let scale = window.duration_us() as f64 / (t_mid - window.start_us).max(1) as f64;
    let p_start = project_keypoints(&model, &start, cam);
    let p_mid = project_keypoints(&model, &prior, cam);
    let mut states: Vec<KeypointState> = binding
        .assignment
        .iter()
        .enumerate()
        .filter_map(|(d, j)| j.map(|j| (d, j)))
        .map(|(d, j)| {
            let v = (p_mid[j].uv - p_start[j].uv) * scale;
            KeypointState::new(j, detected.points[d].position(), v, params)
        })
        .collect();
    states.sort_by_key(|s| s.index);
    Ok((states, binding.table))
}

/// Windowed keypoint tracking and pose solving over the whole stream.
///
/// The first window initializes; each later window yields one pose stamped
/// at its midpoint. Loss of track ends the run with partial output.
pub fn track(config: &RunConfig, events: &EventStream, truth: &Trajectory) -> Result<TrackingOutput, PipelineError> {
    config.validate()?;
    let cam = &config.camera;
    if (events.width as u32, events.height as u32) != (cam.width, cam.height) {
        return Err(PipelineError::SensorMismatch {
            events: (events.width as u32, events.height as u32),
            camera: (cam.width, cam.height),
        });
    }
    let params = &config.tracking.tracker;
    let gate = &config.tracking.gate;
    let w = config.tracking.window_us;
    let (Some(t0), Some(t_end)) = (truth.start_us(), truth.end_us()) else {
        return Err(PipelineError::TooShort(0));
    };
    let n_windows = (t_end - t0) / w;
    if n_windows < 2 {
        return Err(PipelineError::TooShort(t_end - t0));
    }
    let window_at = |k: u64| TimeWindow::new(t0 + k * w, t0 + (k + 1) * w).expect("positive window");
    let sensor = (cam.width, cam.height);

    let (mut states, table) = initialize(config, events, truth, window_at(0))?;

    let mut out = TrackingOutput {
        estimate: Vec::with_capacity(n_windows as usize),
        records: Vec::new(),
        flagged_windows: 0,
        lost: None,
    };
    let first = track_pose(&states, &table, cam, None, gate)?;
    let mut prev = first.pose;
    out.estimate.push(TimedPose {
        t_us: window_at(0).midpoint_us(),
        pose: prev,
    });

    for k in 1..n_windows {
        let window = window_at(k);
        let surfaces = build_local_surfaces(&events.events, window, &states, params)?;
        out.records.extend(track_step(&mut states, &surfaces, params, sensor)?);
        match track_pose(&states, &table, cam, Some(&prev), gate) {
            Ok(est) => {
                out.flagged_windows += usize::from(est.flagged);
                prev = est.pose;
                out.estimate.push(TimedPose {
                    t_us: window.midpoint_us(),
                    pose: prev,
                });
            }
            Err(e @ PoseError::TrackingLost { .. }) => {
                log::warn!("{e} at window {k}");
                out.lost = Some(e);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: String,
    /// Output file name → SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

fn file_sha256(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn write_manifest(config: &RunConfig, command: &str, outputs: &[PathBuf]) -> Result<Manifest, PipelineError> {
    let mut files = BTreeMap::new();
    for p in outputs {
        let name = p
            .file_name()
            .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        files.insert(name, file_sha256(p)?);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        seed: config.seed,
        config_sha256: config.hash(),
        config: config.to_toml_string(),
        outputs: files,
    };
    let path = config.paths.manifest_path();
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

fn event_file(path: &Path) -> impl FnOnce(EventError) -> PipelineError + '_ {
    move |source| PipelineError::EventFile {
        path: path.to_path_buf(),
        source,
    }
}

fn trajectory_file(path: &Path) -> impl FnOnce(TrajectoryError) -> PipelineError + '_ {
    move |source| PipelineError::TrajectoryFile {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_output(config: &RunConfig) -> Result<(), PipelineError> {
    let dir = &config.paths.output;
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes the event file and the ground-truth trajectory.
pub fn cmd_simulate(config: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let sim = simulate(config)?;
    ensure_output(config)?;
    let (ev, tr) = (config.paths.events_path(), config.paths.truth_path());
    write_events(&ev, &sim.events).map_err(event_file(&ev))?;
    sim.truth.save(&tr).map_err(trajectory_file(&tr))?;
    Ok(vec![ev, tr])
}

/// Tracks a recorded stream; writes poses and the track log even when track is lost.
pub fn cmd_track(config: &RunConfig) -> Result<(Vec<PathBuf>, TrackingOutput), PipelineError> {
    config.validate()?;
    let (ev, tr) = (config.paths.events_path(), config.paths.truth_path());
    let events = read_events(&ev).map_err(event_file(&ev))?;
    let truth = Trajectory::load(&tr).map_err(trajectory_file(&tr))?;
    let out = track(config, &events, &truth)?;
    ensure_output(config)?;
    let (est, log) = (config.paths.estimate_path(), config.paths.track_log_path());
    out.trajectory()?.save(&est).map_err(trajectory_file(&est))?;
    save_track_log(&log, &out.records)?;
    Ok((vec![est, log], out))
}

pub fn cmd_evaluate(config: &RunConfig) -> Result<(Vec<PathBuf>, MetricsReport), PipelineError> {
    config.validate()?;
    let (tr, es) = (config.paths.truth_path(), config.paths.estimate_path());
    let truth = Trajectory::load(&tr).map_err(trajectory_file(&tr))?;
    let est = Trajectory::load(&es).map_err(trajectory_file(&es))?;
    let (report, terms) = evaluate(&truth, &est, config.evaluation.delta)?;
    ensure_output(config)?;
    let (json, csv) = (config.paths.metrics_path(), config.paths.step_errors_path());
    report.save_json(&json)?;
    let f = std::fs::File::create(&csv).map_err(io_err(&csv))?;
    write_step_errors(&terms, std::io::BufWriter::new(f)).map_err(io_err(&csv))?;
    Ok((vec![json, csv], report))
}

/// Estimated keypoint image positions from the truth, for diagnostics.
pub fn projected_truth(config: &RunConfig, truth: &Trajectory, t_us: u64) -> Result<Vec<Vector2<f64>>, PipelineError> {
    let pose = truth.sample_at(t_us)?;
    Ok(project_keypoints(&config.scene.model()?, &pose, &config.camera)
        .into_iter()
        .map(|p| p.uv)
        .collect())
}
