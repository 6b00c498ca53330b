//! Synthetic event streams and ground truth from a known rigid model.

mod model;
mod render;

pub use model::{latent_intensity, project_keypoints, ProjectedKeypoint, SceneModel};
pub use render::{micro_step_times, render_events, SimOutput};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::events::EventError;
use crate::se3::{axis_angle, PoseSE3, TimedPose, Trajectory, TrajectoryError};

/// Rigid-motion trajectory of the object in the camera frame.
pub type RigidTrajectory = Trajectory;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("model leaves frustum at t={t_us} us")]
    LeavesFrustum { t_us: u64 },
    #[error("insufficient correspondences: model has {0} keypoints, at least 4 required")]
    InsufficientKeypoints(usize),
    #[error("model keypoints are coplanar; pose is not solvable")]
    CoplanarModel,
    #[error("edge ({a}, {b}) references a keypoint outside 0..{n}")]
    EdgeOutOfRange { a: usize, b: usize, n: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("invalid simulation parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Events(#[from] EventError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Micro-steps per second.
    pub rate_hz: f64,
    /// Width of the Gaussian intensity profile around projected features (px).
    pub profile_sigma_px: f64,
    /// Uniform background noise events per pixel per second (0 disables).
    pub noise_rate_hz: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            rate_hz: 10_000.0,
            profile_sigma_px: 1.5,
            noise_rate_hz: 0.0,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0 && self.rate_hz <= 1e6) {
            return Err(SimError::InvalidParam(format!("rate_hz = {}", self.rate_hz)));
        }
        if !(self.profile_sigma_px.is_finite() && self.profile_sigma_px > 0.0) {
            return Err(SimError::InvalidParam(format!(
                "profile_sigma_px = {}",
                self.profile_sigma_px
            )));
        }
        if !(self.noise_rate_hz.is_finite() && self.noise_rate_hz >= 0.0) {
            return Err(SimError::InvalidParam(format!(
                "noise_rate_hz = {}",
                self.noise_rate_hz
            )));
        }
        Ok(())
    }
}

/// Parametric rigid motion sampled into a waypoint trajectory.
pub trait RigidMotion {
    fn pose_at(&self, t_us: u64) -> PoseSE3;
    fn duration_us(&self) -> u64;
    fn sample_interval_us(&self) -> u64;

    /// Waypoints every `sample_interval_us`, always including both ends.
    fn trajectory(&self) -> Result<Trajectory, SimError> {
        let step = self.sample_interval_us();
        if step == 0 {
            return Err(SimError::InvalidParam("sample_interval_us = 0".into()));
        }
        let end = self.duration_us();
        let mut samples = Vec::new();
        let mut t = 0;
        while t < end {
            samples.push(TimedPose {
                t_us: t,
                pose: self.pose_at(t),
            });
            t += step;
        }
        samples.push(TimedPose {
            t_us: end,
            pose: self.pose_at(end),
        });
        Ok(Trajectory::new(samples)?)
    }
}

/// `spin_rate · t` about `spin_axis` applied after the initial orientation.
fn spun(initial_rotation: &Vector3<f64>, spin_axis: &Vector3<f64>, spin_rate: f64, t: f64) -> Matrix3<f64> {
    let r0 = PoseSE3::from_rotation_vector(*initial_rotation, Vector3::zeros()).rotation;
    if spin_axis.norm() > 0.0 {
        axis_angle(*spin_axis, spin_rate * t) * r0
    } else {
        r0
    }
}

/// Circular translation plus constant spin.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitMotion {
    /// Orbit centre in the camera frame (m).
    pub center: Vector3<f64>,
    /// Orbit radius in the camera x–y plane (m).
    pub radius: f64,
    /// Angular frequency of the orbit (rad/s); linear speed is `radius · orbit_rate`.
    pub orbit_rate: f64,
    /// Initial orientation as a rotation vector (rad).
    pub initial_rotation: Vector3<f64>,
    pub spin_axis: Vector3<f64>,
    /// Spin rate about `spin_axis` (rad/s).
    pub spin_rate: f64,
    pub duration_us: u64,
    pub sample_interval_us: u64,
}

impl OrbitMotion {
    pub fn linear_speed(&self) -> f64 {
        self.radius * self.orbit_rate.abs()
    }
}

impl RigidMotion for OrbitMotion {
    fn pose_at(&self, t_us: u64) -> PoseSE3 {
        let t = t_us as f64 * 1e-6;
        let phase = self.orbit_rate * t;
        let translation = self.center + Vector3::new(self.radius * phase.cos(), self.radius * phase.sin(), 0.0);
        PoseSE3::new(
            spun(&self.initial_rotation, &self.spin_axis, self.spin_rate, t),
            translation,
        )
    }

    fn duration_us(&self) -> u64 {
        self.duration_us
    }

    fn sample_interval_us(&self) -> u64 {
        self.sample_interval_us
    }
}

/// Constant-velocity translation through `center` at mid-sequence, plus constant spin.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMotion {
    pub center: Vector3<f64>,
    /// m/s, camera frame.
    pub velocity: Vector3<f64>,
    pub initial_rotation: Vector3<f64>,
    pub spin_axis: Vector3<f64>,
    pub spin_rate: f64,
    pub duration_us: u64,
    pub sample_interval_us: u64,
}

impl RigidMotion for LinearMotion {
    fn pose_at(&self, t_us: u64) -> PoseSE3 {
        let t = t_us as f64 * 1e-6;
        let from_mid = t - self.duration_us as f64 * 0.5e-6;
        PoseSE3::new(
            spun(&self.initial_rotation, &self.spin_axis, self.spin_rate, t),
            self.center + self.velocity * from_mid,
        )
    }

    fn duration_us(&self) -> u64 {
        self.duration_us
    }

    fn sample_interval_us(&self) -> u64 {
        self.sample_interval_us
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::events::{ContrastModel, Polarity};

    fn small_cam() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 80.0, 60.0, 160, 120).unwrap()
    }

    fn line_model() -> SceneModel {
        // one vertical segment between keypoints 0 and 1; the rest only anchor the model
        SceneModel::new(
            vec![
                Vector3::new(0.0, -0.1, 0.0),
                Vector3::new(0.0, 0.1, 0.0),
                Vector3::new(0.05, 0.0, 0.05),
                Vector3::new(-0.05, 0.02, 0.05),
            ],
            vec![(0, 1)],
            1.0,
            0.0,
        )
        .unwrap()
    }

    fn ramp(dx: f64, duration_us: u64) -> Trajectory {
        let a = PoseSE3::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let b = PoseSE3::from_translation(Vector3::new(dx, 0.0, 1.0));
        Trajectory::new(vec![
            TimedPose { t_us: 0, pose: a },
            TimedPose {
                t_us: duration_us,
                pose: b,
            },
        ])
        .unwrap()
    }

    #[test]
    fn static_trajectory_emits_nothing() {
        let model = SceneModel::cuboid(Vector3::new(0.1, 0.1, 0.1), 1.0, 1.0).unwrap();
        let pose = PoseSE3::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let traj = Trajectory::new(vec![TimedPose { t_us: 0, pose }, TimedPose { t_us: 5000, pose }]).unwrap();
        let out = render_events(
            &model,
            &traj,
            &small_cam(),
            ContrastModel::new(0.1).unwrap(),
            &SimParams::default(),
        )
        .unwrap();
        assert!(out.events.events.is_empty());
        assert_eq!(out.truth.len(), 51);
    }

    #[test]
    fn behind_camera_is_reported_with_time() {
        let model = line_model();
        let a = PoseSE3::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let b = PoseSE3::from_translation(Vector3::new(0.0, 0.0, -1.0));
        let traj = Trajectory::new(vec![TimedPose { t_us: 0, pose: a }, TimedPose { t_us: 1000, pose: b }]).unwrap();
        let err = render_events(
            &model,
            &traj,
            &small_cam(),
            ContrastModel::new(0.1).unwrap(),
            &SimParams::default(),
        )
        .unwrap_err();
        match err {
            SimError::LeavesFrustum { t_us } => assert!(t_us > 0 && t_us <= 1000),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_string(1000).contains("model leaves frustum"));
    }

    fn err_string(t: u64) -> String {
        SimError::LeavesFrustum { t_us: t }.to_string()
    }

    #[test]
    fn moving_edge_splits_polarity_by_side() {
        // 1 px shift to the right: the right flank brightens, the left flank darkens
        let traj = ramp(1.0 / 300.0, 2000);
        let out = render_events(
            &line_model(),
            &traj,
            &small_cam(),
            ContrastModel::new(0.1).unwrap(),
            &SimParams::default(),
        )
        .unwrap();
        let ev = &out.events.events;
        assert!(!ev.is_empty());
        let mid = 80.5;
        for e in ev {
            let x = e.x as f64;
            assert!(x != mid);
            if x > mid {
                assert_eq!(e.p, Polarity::Positive, "{e:?}");
            } else {
                assert_eq!(e.p, Polarity::Negative, "{e:?}");
            }
        }
        assert!(ev.iter().any(|e| e.p == Polarity::Positive));
        assert!(ev.iter().any(|e| e.p == Polarity::Negative));
        assert!(ev.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn orbit_speed_and_validity() {
        let orbit = OrbitMotion {
            center: Vector3::new(0.0, 0.0, 1.5),
            radius: 0.25,
            orbit_rate: 12.0,
            initial_rotation: Vector3::new(0.3, 0.2, 0.1),
            spin_axis: Vector3::new(0.0, 1.0, 0.0),
            spin_rate: 0.5,
            duration_us: 100_000,
            sample_interval_us: 1000,
        };
        assert!((orbit.linear_speed() - 3.0).abs() < 1e-12);
        let traj = orbit.trajectory().unwrap();
        assert_eq!(traj.len(), 101);
        let a = traj.samples()[10].pose;
        let b = traj.samples()[11].pose;
        let speed = a.translation_distance(&b) / 1e-3;
        assert!((speed - 3.0).abs() < 0.01, "{speed}");
        assert!((a.rotation_distance(&b) / 1e-3 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn linear_motion_passes_center_at_midpoint() {
        let m = LinearMotion {
            center: Vector3::new(0.0, 0.0, 4.0),
            velocity: Vector3::new(3.0, 0.0, 0.0),
            initial_rotation: Vector3::zeros(),
            spin_axis: Vector3::z(),
            spin_rate: 30f64.to_radians(),
            duration_us: 2_000_000,
            sample_interval_us: 10_000,
        };
        assert!((m.pose_at(1_000_000).translation - m.center).norm() < 1e-12);
        assert!((m.pose_at(0).translation.x + 3.0).abs() < 1e-12);
        let traj = m.trajectory().unwrap();
        assert_eq!(traj.len(), 201);
        assert!((traj.samples()[200].pose.rotation_angle() - 60f64.to_radians()).abs() < 1e-9);
    }
}
