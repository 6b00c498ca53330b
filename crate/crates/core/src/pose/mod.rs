//! 2D–3D correspondence and 6-DoF pose from tracked keypoints.

mod epnp;

pub use epnp::{absolute_orientation, reprojection_rms, solve_epnp, CandidateReport, EpnpSolution};

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::detect::KeypointSet;
use crate::se3::PoseSE3;
use crate::sim::{project_keypoints, SceneModel};
use crate::tracker::KeypointState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("insufficient correspondences: {0} available, at least 4 required")]
    InsufficientCorrespondences(usize),
    #[error("ambiguous assignment: detections {detections:?} all lie within 1 px of model keypoint {model_index}")]
    AmbiguousAssignment { model_index: usize, detections: Vec<usize> },
    #[error("degenerate configuration: 3D points are collinear or coincident")]
    Degenerate,
    #[error("pose behind camera: no candidate places every point in front")]
    BehindCamera,
    #[error("{points_2d} image points but {points_3d} model points")]
    LengthMismatch { points_2d: usize, points_3d: usize },
    #[error("tracking lost: {alive} keypoints alive, at least 4 required")]
    TrackingLost { alive: usize },
    #[error("invalid gate parameter: {0}")]
    InvalidGate(String),
}

/// Semantic keypoint index → object-frame model point, fixed at initialization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceTable {
    entries: BTreeMap<usize, Vector3<f64>>,
}

impl CorrespondenceTable {
    /// Identity binding of every model keypoint to its own index.
    pub fn from_model(model: &SceneModel) -> Self {
        Self {
            entries: model.keypoints().iter().copied().enumerate().collect(),
        }
    }

    pub fn insert(&mut self, index: usize, point: Vector3<f64>) -> Option<Vector3<f64>> {
        self.entries.insert(index, point)
    }

    pub fn get(&self, index: usize) -> Option<&Vector3<f64>> {
        self.entries.get(&index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }
}

/// Result of binding detections to model keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub table: CorrespondenceTable,
    /// `assignment[d]` is the model index given to detection `d`.
    pub assignment: Vec<Option<usize>>,
}

/// Distance under which two detections compete for the same model keypoint.
const AMBIGUITY_PX: f64 = 1.0;

/// Binds valid detections to model keypoints.
///
/// With a prior pose, detections are matched to projected model keypoints
/// by greedy minimum distance, one-to-one. Without one, detection `d` is
/// taken to be model keypoint `d`. Semantic indices equal model indices.
pub fn initialize_correspondence(
    detected: &KeypointSet,
    model: &SceneModel,
    cam: &CameraIntrinsics,
    prior: Option<&PoseSE3>,
) -> Result<Correspondence, PoseError> {
    let n_model = model.len();
    let mut assignment = vec![None; detected.len()];
    match prior {
        None => {
            for (d, kp) in detected.points.iter().enumerate() {
                if kp.valid && d < n_model {
                    assignment[d] = Some(d);
                }
            }
        }
        Some(pose) => {
            let projected = project_keypoints(model, pose, cam);
            for (j, pk) in projected.iter().enumerate() {
                if pk.depth <= 0.0 {
                    continue;
                }
                let near: Vec<usize> = detected
                    .points
                    .iter()
                    .enumerate()
                    .filter(|(_, kp)| kp.valid && (kp.position() - pk.uv).norm() <= AMBIGUITY_PX)
                    .map(|(d, _)| d)
                    .collect();
                if near.len() > 1 {
                    return Err(PoseError::AmbiguousAssignment {
                        model_index: j,
                        detections: near,
                    });
                }
            }
            let mut costs: Vec<(f64, usize, usize)> = Vec::new();
            for (d, kp) in detected.points.iter().enumerate().filter(|(_, kp)| kp.valid) {
                for (j, pk) in projected.iter().enumerate().filter(|(_, pk)| pk.depth > 0.0) {
                    costs.push(((kp.position() - pk.uv).norm(), d, j));
                }
            }
            costs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
            let mut model_taken = vec![false; n_model];
            for (_, d, j) in costs {
                if assignment[d].is_none() && !model_taken[j] {
                    assignment[d] = Some(j);
                    model_taken[j] = true;
                }
            }
        }
    }
    let mut table = CorrespondenceTable::default();
    for j in assignment.iter().flatten() {
        table.insert(*j, model.keypoints()[*j]);
    }
    if table.len() < 4 {
        return Err(PoseError::InsufficientCorrespondences(table.len()));
    }
    Ok(Correspondence { table, assignment })
}

/// `prev · delta⁻¹`: the pose after undoing the inter-frame change `delta`.
pub fn recursive_pose(prev: &PoseSE3, delta: &PoseSE3) -> PoseSE3 {
    prev.compose(&delta.inverse())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacParams {
    pub iterations: usize,
    /// Reprojection distance for inliers (px).
    pub inlier_px: f64,
    /// Points per hypothesis.
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 64,
            inlier_px: 3.0,
            sample_size: 5,
            seed: 0,
        }
    }
}

/// Hold-last-pose thresholds for window-to-window changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseGate {
    pub max_rot_step_deg: f64,
    pub max_trans_step_m: f64,
    /// Wrap the solver in RANSAC for noisy correspondences.
    pub ransac: Option<RansacParams>,
}

impl Default for PoseGate {
    fn default() -> Self {
        Self {
            max_rot_step_deg: 15.0,
            max_trans_step_m: 0.2,
            ransac: None,
        }
    }
}

impl PoseGate {
    pub fn validate(&self) -> Result<(), PoseError> {
        if !(self.max_rot_step_deg > 0.0 && self.max_trans_step_m > 0.0) {
            return Err(PoseError::InvalidGate("step thresholds must be positive".into()));
        }
        if let Some(r) = &self.ransac {
            if r.iterations == 0 || r.sample_size < 4 || r.inlier_px.is_nan() || r.inlier_px <= 0.0 {
                return Err(PoseError::InvalidGate(
                    "ransac needs iterations > 0, sample_size >= 4, inlier_px > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Consensus EPnP: best minimal-sample hypothesis, refit on its inliers.
pub fn solve_epnp_ransac(
    points_2d: &[Vector2<f64>],
    points_3d: &[Vector3<f64>],
    cam: &CameraIntrinsics,
    params: &RansacParams,
) -> Result<EpnpSolution, PoseError> {
    let n = points_2d.len();
    if n < 4 || n != points_3d.len() {
        return solve_epnp(points_2d, points_3d, cam);
    }
    let k = params.sample_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Vec<usize>> = None;
    for _ in 0..params.iterations {
        let idx = sample(&mut rng, n, k).into_vec();
        let p2: Vec<_> = idx.iter().map(|&i| points_2d[i]).collect();
        let p3: Vec<_> = idx.iter().map(|&i| points_3d[i]).collect();
        let Ok(sol) = solve_epnp(&p2, &p3, cam) else { continue };
        let inliers: Vec<usize> = (0..n)
            .filter(|&i| {
                let c = sol.pose.transform_point(&points_3d[i]);
                c.z > 0.0 && (cam.project(&c) - points_2d[i]).norm() <= params.inlier_px
            })
            .collect();
        if best.as_ref().is_none_or(|b| inliers.len() > b.len()) {
            best = Some(inliers);
        }
    }
    match best {
        Some(inl) if inl.len() >= 4 => {
            let p2: Vec<_> = inl.iter().map(|&i| points_2d[i]).collect();
            let p3: Vec<_> = inl.iter().map(|&i| points_3d[i]).collect();
            solve_epnp(&p2, &p3, cam)
        }
        _ => solve_epnp(points_2d, points_3d, cam),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: PoseSE3,
    /// Reprojection RMS of the solver output (px).
    pub rms: f64,
    /// The solution exceeded a step threshold and the previous pose was kept.
    pub flagged: bool,
    pub correspondences: usize,
    pub candidates: Vec<CandidateReport>,
}

/// Solves the pose from alive keypoints that have table entries.
pub fn track_pose(
    states: &[KeypointState],
    table: &CorrespondenceTable,
    cam: &CameraIntrinsics,
    prev_pose: Option<&PoseSE3>,
    gate: &PoseGate,
) -> Result<PoseEstimate, PoseError> {
    let (p2, p3): (Vec<Vector2<f64>>, Vec<Vector3<f64>>) = states
        .iter()
        .filter(|s| s.alive)
        .filter_map(|s| table.get(s.index).map(|p| (s.position, *p)))
        .unzip();
    if p2.len() < 4 {
        return Err(PoseError::TrackingLost { alive: p2.len() });
    }
    let sol = match &gate.ransac {
        Some(r) => solve_epnp_ransac(&p2, &p3, cam, r)?,
        None => solve_epnp(&p2, &p3, cam)?,
    };
    let mut est = PoseEstimate {
        pose: sol.pose,
        rms: sol.rms,
        flagged: false,
        correspondences: p2.len(),
        candidates: sol.candidates,
    };
    if let Some(prev) = prev_pose {
        let rot = prev.rotation_distance(&sol.pose).to_degrees();
        let trans = prev.translation_distance(&sol.pose);
        if rot > gate.max_rot_step_deg || trans > gate.max_trans_step_m {
            log::debug!("pose step {rot:.2} deg / {trans:.3} m exceeds gate; holding previous pose");
            est.pose = *prev;
            est.flagged = true;
        }
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Keypoint;
    use crate::tracker::TrackerParams;
    use nalgebra::Vector3;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn cube() -> SceneModel {
        SceneModel::cuboid(Vector3::new(0.2, 0.15, 0.1), 1.0, 1.0).unwrap()
    }

    fn pose() -> PoseSE3 {
        PoseSE3::from_rotation_vector(Vector3::new(0.3, -0.2, 0.4), Vector3::new(0.05, -0.03, 1.0))
    }

    fn projections(model: &SceneModel, p: &PoseSE3) -> Vec<Vector2<f64>> {
        project_keypoints(model, p, &cam()).iter().map(|k| k.uv).collect()
    }

    #[test]
    fn exact_projection_recovers_pose() {
        let m = cube();
        let sol = solve_epnp(&projections(&m, &pose()), m.keypoints(), &cam()).unwrap();
        assert!(sol.pose.rotation_distance(&pose()) < 1e-9);
        assert!(sol.pose.translation_distance(&pose()) < 1e-9);
        assert!(sol.rms < 1e-6);
        assert_eq!(sol.candidates.len(), 4);
        assert!(sol.candidates.iter().all(|c| sol.rms <= c.rms));
    }

    #[test]
    fn planar_points_use_three_control_points() {
        let pts: Vec<Vector3<f64>> = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.1, 0.0, 0.0),
            Vector3::new(0.0, 0.1, 0.0),
            Vector3::new(0.1, 0.12, 0.0),
            Vector3::new(-0.05, 0.07, 0.0),
        ];
        let p = pose();
        let uv: Vec<_> = pts.iter().map(|x| cam().project(&p.transform_point(x))).collect();
        let sol = solve_epnp(&uv, &pts, &cam()).unwrap();
        assert_eq!(sol.candidates.len(), 3);
        assert!(sol.pose.rotation_distance(&p) < 1e-7);
        assert!(sol.pose.translation_distance(&p) < 1e-8);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<_> = (0..5).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let uv: Vec<_> = pts
            .iter()
            .map(|x| cam().project(&(x + Vector3::new(0.0, 0.0, 1.0))))
            .collect();
        assert_eq!(solve_epnp(&uv, &pts, &cam()).unwrap_err(), PoseError::Degenerate);
        assert!(PoseError::Degenerate.to_string().contains("degenerate configuration"));
    }

    #[test]
    fn too_few_points() {
        let m = cube();
        let uv = projections(&m, &pose());
        assert!(matches!(
            solve_epnp(&uv[..3], &m.keypoints()[..3], &cam()),
            Err(PoseError::InsufficientCorrespondences(3))
        ));
    }

    #[test]
    fn recursive_pose_examples() {
        let prev = pose();
        assert_eq!(recursive_pose(&prev, &PoseSE3::identity()), prev);
        let d = Vector3::new(0.1, -0.2, 0.3);
        let out = recursive_pose(&PoseSE3::identity(), &PoseSE3::from_translation(d));
        assert!((out.translation + d).norm() < 1e-15);
    }

    #[test]
    fn correspondence_exact_and_prior_free() {
        let m = cube();
        let uv = projections(&m, &pose());
        let det = KeypointSet::new(uv.iter().rev().map(|p| Keypoint::valid(p.x, p.y, 1.0)).collect());
        let c = initialize_correspondence(&det, &m, &cam(), Some(&pose())).unwrap();
        let expect: Vec<_> = (0..8).rev().map(Some).collect();
        assert_eq!(c.assignment, expect);
        let c = initialize_correspondence(&det, &m, &cam(), None).unwrap();
        assert_eq!(c.assignment, (0..8).map(Some).collect::<Vec<_>>());

        let three = KeypointSet::new(det.points[..3].to_vec());
        let err = initialize_correspondence(&three, &m, &cam(), Some(&pose())).unwrap_err();
        assert!(err.to_string().starts_with("insufficient correspondences"));
    }

    #[test]
    fn correspondence_ambiguity_is_reported() {
        let m = cube();
        let uv = projections(&m, &pose());
        let mut pts: Vec<_> = uv.iter().map(|p| Keypoint::valid(p.x, p.y, 1.0)).collect();
        pts.push(Keypoint::valid(uv[2].x + 0.5, uv[2].y, 1.0));
        let err = initialize_correspondence(&KeypointSet::new(pts), &m, &cam(), Some(&pose())).unwrap_err();
        assert_eq!(
            err,
            PoseError::AmbiguousAssignment {
                model_index: 2,
                detections: vec![2, 8]
            }
        );
    }

    fn states_at(uv: &[Vector2<f64>]) -> Vec<KeypointState> {
        let params = TrackerParams::default();
        uv.iter()
            .enumerate()
            .map(|(i, p)| KeypointState::new(i, *p, Vector2::zeros(), &params))
            .collect()
    }

    #[test]
    fn track_pose_exact_lost_and_gated() {
        let m = cube();
        let table = CorrespondenceTable::from_model(&m);
        let uv = projections(&m, &pose());
        let gate = PoseGate::default();
        let est = track_pose(&states_at(&uv), &table, &cam(), None, &gate).unwrap();
        assert!(est.pose.rotation_distance(&pose()) < 1e-9 && !est.flagged);

        let mut st = states_at(&uv);
        st.iter_mut().skip(3).for_each(|s| s.alive = false);
        assert_eq!(
            track_pose(&st, &table, &cam(), None, &gate).unwrap_err(),
            PoseError::TrackingLost { alive: 3 }
        );

        // keypoint 0 teleported 50 px, solved with only five points
        let mut bad = uv.clone();
        bad[0].x += 50.0;
        let mut st = states_at(&bad);
        st.iter_mut().skip(5).for_each(|s| s.alive = false);
        let prev = pose();
        let free = track_pose(&st, &table, &cam(), None, &gate).unwrap();
        let jump_deg = free.pose.rotation_distance(&prev).to_degrees();
        let jump_m = free.pose.translation_distance(&prev);
        assert!(
            jump_deg > 15.0 || jump_m > 0.2,
            "outlier too weak: {jump_deg} deg {jump_m} m"
        );
        let est = track_pose(&st, &table, &cam(), Some(&prev), &gate).unwrap();
        assert!(est.flagged);
        assert_eq!(est.pose, prev);
    }

    #[test]
    fn ransac_rejects_outlier() {
        let m = cube();
        let mut uv = projections(&m, &pose());
        uv[3].y -= 40.0;
        let sol = solve_epnp_ransac(&uv, m.keypoints(), &cam(), &RansacParams::default()).unwrap();
        assert!(sol.pose.rotation_distance(&pose()) < 1e-6);
    }
}
