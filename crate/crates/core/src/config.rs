//! Run configuration loaded from TOML. Every section has defaults, so an
//! empty file describes the reference cuboid scenario.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics};
use crate::events::ContrastModel;
use crate::pose::{PoseError, PoseGate};
use crate::se3::Trajectory;
use crate::sim::{LinearMotion, OrbitMotion, RigidMotion, SceneModel, SimError, SimParams};
use crate::tracker::{TrackerError, TrackerParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Scene(#[from] SimError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Gate(#[from] PoseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Project the model under the ground-truth pose.
    #[default]
    Oracle,
    /// Density-map maxima bound to the model by nearest projection.
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Cuboid edge lengths (m); ignored when `keypoints` is set.
    pub size: [f64; 3],
    /// Explicit object-frame keypoints (m).
    pub keypoints: Option<Vec<[f64; 3]>>,
    /// Wireframe segments between keypoint indices (with explicit keypoints).
    pub edges: Vec<[usize; 2]>,
    pub edge_contrast: f64,
    pub keypoint_contrast: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        // corner blobs brighter than edges so matches do not slide along an edge
        Self {
            size: [1.0, 0.8, 0.6],
            keypoints: None,
            edges: Vec::new(),
            edge_contrast: 0.5,
            keypoint_contrast: 2.0,
        }
    }
}

impl SceneConfig {
    pub fn model(&self) -> Result<SceneModel, SimError> {
        match &self.keypoints {
            None => SceneModel::cuboid(Vector3::from(self.size), self.edge_contrast, self.keypoint_contrast),
            Some(kp) => SceneModel::new(
                kp.iter().map(|p| Vector3::from(*p)).collect(),
                self.edges.iter().map(|e| (e[0], e[1])).collect(),
                self.edge_contrast,
                self.keypoint_contrast,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    /// Straight line through `center` at `velocity`.
    #[default]
    Linear,
    /// Circle of `radius` about `center` at `orbit_rate`.
    Orbit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub kind: MotionKind,
    pub center: [f64; 3],
    /// Linear motion only (m/s).
    pub velocity: [f64; 3],
    /// Orbit only (m).
    pub radius: f64,
    /// Orbit only (rad/s).
    pub orbit_rate: f64,
    pub initial_rotation: [f64; 3],
    pub spin_axis: [f64; 3],
    pub spin_rate: f64,
    pub duration_us: u64,
    pub sample_interval_us: u64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        // 3 m/s lateral sweep, 30 deg/s spin; at 7 m the 6 m sweep stays in view
        Self {
            kind: MotionKind::Linear,
            center: [0.0, 0.0, 7.0],
            velocity: [3.0, 0.0, 0.0],
            radius: 0.6,
            orbit_rate: 5.0,
            initial_rotation: [0.5, -0.4, 0.3],
            spin_axis: [0.3, 1.0, 0.2],
            spin_rate: 30f64.to_radians(),
            duration_us: 2_000_000,
            sample_interval_us: 1_000,
        }
    }
}

impl MotionConfig {
    pub fn orbit(&self) -> OrbitMotion {
        OrbitMotion {
            center: Vector3::from(self.center),
            radius: self.radius,
            orbit_rate: self.orbit_rate,
            initial_rotation: Vector3::from(self.initial_rotation),
            spin_axis: Vector3::from(self.spin_axis),
            spin_rate: self.spin_rate,
            duration_us: self.duration_us,
            sample_interval_us: self.sample_interval_us,
        }
    }

    pub fn linear(&self) -> LinearMotion {
        LinearMotion {
            center: Vector3::from(self.center),
            velocity: Vector3::from(self.velocity),
            initial_rotation: Vector3::from(self.initial_rotation),
            spin_axis: Vector3::from(self.spin_axis),
            spin_rate: self.spin_rate,
            duration_us: self.duration_us,
            sample_interval_us: self.sample_interval_us,
        }
    }

    /// Ground-truth waypoints for the configured motion kind.
    pub fn trajectory(&self) -> Result<Trajectory, SimError> {
        match self.kind {
            MotionKind::Linear => self.linear().trajectory(),
            MotionKind::Orbit => self.orbit().trajectory(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub contrast_threshold: f64,
    pub rate_hz: f64,
    pub profile_sigma_px: f64,
    pub noise_rate_hz: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let p = SimParams::default();
        Self {
            contrast_threshold: 0.1,
            rate_hz: p.rate_hz,
            profile_sigma_px: p.profile_sigma_px,
            noise_rate_hz: p.noise_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    pub window_us: u64,
    pub detector: DetectorKind,
    pub tracker: TrackerParams,
    pub gate: PoseGate,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            window_us: 10_000,
            detector: DetectorKind::Oracle,
            tracker: TrackerParams::default(),
            gate: PoseGate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub delta: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { delta: 1 }
    }
}

/// File locations. Relative inputs resolve against `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub output: PathBuf,
    pub events: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            events: None,
            truth: None,
            estimate: None,
        }
    }
}

impl PathConfig {
    fn resolve(&self, p: &Option<PathBuf>, default: &str) -> PathBuf {
        match p {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.output.join(p),
            None => self.output.join(default),
        }
    }

    pub fn events_path(&self) -> PathBuf {
        self.resolve(&self.events, "events.evt")
    }

    pub fn truth_path(&self) -> PathBuf {
        self.resolve(&self.truth, "truth.csv")
    }

    pub fn estimate_path(&self) -> PathBuf {
        self.resolve(&self.estimate, "poses.csv")
    }

    pub fn track_log_path(&self) -> PathBuf {
        self.output.join("track_log.csv")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.output.join("metrics.json")
    }

    pub fn step_errors_path(&self) -> PathBuf {
        self.output.join("step_errors.csv")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output.join("manifest.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub camera: CameraIntrinsics,
    pub scene: SceneConfig,
    pub motion: MotionConfig,
    pub sim: SimConfig,
    pub tracking: TrackingConfig,
    pub evaluation: EvalConfig,
    pub paths: PathConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            camera: CameraIntrinsics {
                fx: 1000.0,
                fy: 1000.0,
                cx: 640.0,
                cy: 360.0,
                width: 1280,
                height: 720,
            },
            scene: SceneConfig::default(),
            motion: MotionConfig::default(),
            sim: SimConfig::default(),
            tracking: TrackingConfig::default(),
            evaluation: EvalConfig::default(),
            paths: PathConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            rate_hz: self.sim.rate_hz,
            profile_sigma_px: self.sim.profile_sigma_px,
            noise_rate_hz: self.sim.noise_rate_hz,
            seed: self.seed,
        }
    }

    pub fn contrast(&self) -> Result<ContrastModel, ConfigError> {
        ContrastModel::new(self.sim.contrast_threshold)
            .ok_or_else(|| ConfigError::Invalid(format!("contrast_threshold = {}", self.sim.contrast_threshold)))
    }

    /// Range checks on every section; the scene must yield a solvable model.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.camera.validate()?;
        if self.camera.width > u16::MAX as u32 || self.camera.height > u16::MAX as u32 {
            return Err(ConfigError::Invalid("sensor dimensions exceed 65535".into()));
        }
        self.scene.model()?;
        self.contrast()?;
        self.sim_params().validate()?;
        let m = &self.motion;
        if m.duration_us == 0 || m.sample_interval_us == 0 {
            return Err(ConfigError::Invalid(
                "motion duration and sample interval must be positive".into(),
            ));
        }
        if m.radius.is_nan() || m.radius < 0.0 || m.center[2] <= 0.0 {
            return Err(ConfigError::Invalid(
                "motion needs radius >= 0 and a centre in front of the camera".into(),
            ));
        }
        if self.tracking.window_us == 0 {
            return Err(ConfigError::Invalid("window_us must be positive".into()));
        }
        self.tracking.tracker.validate()?;
        self.tracking.gate.validate()?;
        if self.evaluation.delta == 0 {
            return Err(ConfigError::Invalid("delta must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
