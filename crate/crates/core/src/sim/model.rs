use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};

use super::SimError;
use crate::camera::CameraIntrinsics;
use crate::se3::PoseSE3;

/// Known rigid object: ordered 3D keypoints plus an optional wireframe.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    keypoints: Vec<Vector3<f64>>,
    edges: Vec<(usize, usize)>,
    /// Log-intensity amplitude of wireframe segments.
    pub edge_contrast: f64,
    /// Log-intensity amplitude of the blob drawn at each keypoint.
    pub keypoint_contrast: f64,
}

impl SceneModel {
    pub fn new(
        keypoints: Vec<Vector3<f64>>,
        edges: Vec<(usize, usize)>,
        edge_contrast: f64,
        keypoint_contrast: f64,
    ) -> Result<Self, SimError> {
        if keypoints.len() < 4 {
            return Err(SimError::InsufficientKeypoints(keypoints.len()));
        }
        if let Some(&(a, b)) = edges
            .iter()
            .find(|(a, b)| *a >= keypoints.len() || *b >= keypoints.len())
        {
            return Err(SimError::EdgeOutOfRange {
                a,
                b,
                n: keypoints.len(),
            });
        }
        if is_coplanar(&keypoints) {
            return Err(SimError::CoplanarModel);
        }
        Ok(Self {
            keypoints,
            edges,
            edge_contrast,
            keypoint_contrast,
        })
    }

    /// Axis-aligned box centred on the origin: 8 corners, 12 edges.
    pub fn cuboid(size: Vector3<f64>, edge_contrast: f64, keypoint_contrast: f64) -> Result<Self, SimError> {
        let h = size * 0.5;
        let mut kp = Vec::with_capacity(8);
        for i in 0..8 {
            let sx = if i & 1 == 0 { -h.x } else { h.x };
            let sy = if i & 2 == 0 { -h.y } else { h.y };
            let sz = if i & 4 == 0 { -h.z } else { h.z };
            kp.push(Vector3::new(sx, sy, sz));
        }
        let mut edges = Vec::with_capacity(12);
        for a in 0..8usize {
            for bit in [1usize, 2, 4] {
                if a & bit == 0 {
                    edges.push((a, a | bit));
                }
            }
        }
        Self::new(kp, edges, edge_contrast, keypoint_contrast)
    }

    pub fn keypoints(&self) -> &[Vector3<f64>] {
        &self.keypoints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

fn is_coplanar(points: &[Vector3<f64>]) -> bool {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    max <= 0.0 || min <= 1e-10 * max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedKeypoint {
    pub uv: Vector2<f64>,
    /// Camera-frame depth (meters).
    pub depth: f64,
    pub visible: bool,
}

/// Pinhole projection of every model keypoint under `pose` (object → camera).
pub fn project_keypoints(model: &SceneModel, pose: &PoseSE3, cam: &CameraIntrinsics) -> Vec<ProjectedKeypoint> {
    model
        .keypoints()
        .iter()
        .map(|p| {
            let pc = pose.transform_point(p);
            if pc.z > 0.0 {
                let uv = cam.project(&pc);
                ProjectedKeypoint {
                    uv,
                    depth: pc.z,
                    visible: cam.contains(&uv),
                }
            } else {
                ProjectedKeypoint {
                    uv: Vector2::new(f64::NAN, f64::NAN),
                    depth: pc.z,
                    visible: false,
                }
            }
        })
        .collect()
}

/// Distance from `p` to segment `[a, b]`.
#[inline]
pub(crate) fn segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Latent log intensity (above background) at pixel centre `(x, y)`:
/// a sum of Gaussian profiles of width `sigma` around projected segments
/// and keypoints.
pub fn latent_intensity(model: &SceneModel, projected: &[Vector2<f64>], sigma: f64, x: f64, y: f64) -> f64 {
    let p = Vector2::new(x, y);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut l = 0.0;
    if model.edge_contrast != 0.0 {
        for &(a, b) in model.edges() {
            let d = segment_distance(p, projected[a], projected[b]);
            l += model.edge_contrast * (-d * d * inv).exp();
        }
    }
    if model.keypoint_contrast != 0.0 {
        for k in projected {
            let d2 = (p - k).norm_squared();
            l += model.keypoint_contrast * (-d2 * inv).exp();
        }
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 640.0, 360.0, 1280, 720).unwrap()
    }

    fn tetra() -> SceneModel {
        SceneModel::new(
            vec![
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(0.1, 0.0, 1.0),
                Vector3::new(0.0, 0.1, 1.0),
                Vector3::new(0.0, 0.0, -1.0),
            ],
            vec![],
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_and_offset_point() {
        let pk = project_keypoints(&tetra(), &PoseSE3::identity(), &cam());
        assert_eq!(pk[0].uv, Vector2::new(640.0, 360.0));
        assert!(pk[0].visible);
        // 500 · 0.1 / 1 + 640
        assert_eq!(pk[1].uv, Vector2::new(690.0, 360.0));
        assert!(!pk[3].visible);
        assert!(pk[3].depth < 0.0);
    }

    #[test]
    fn fronto_parallel_translation_shifts_u_exactly() {
        let model = tetra();
        let base = PoseSE3::from_translation(Vector3::new(0.0, 0.0, 2.0));
        let moved = PoseSE3::from_translation(Vector3::new(0.05, 0.0, 2.0));
        let a = project_keypoints(&model, &base, &cam());
        let b = project_keypoints(&model, &moved, &cam());
        for (pa, pb) in a.iter().zip(&b).take(3) {
            let expected = 500.0 * 0.05 / pa.depth;
            assert!((pb.uv.x - pa.uv.x - expected).abs() < 1e-9);
            assert_eq!(pb.uv.y, pa.uv.y);
        }
    }

    #[test]
    fn model_validation() {
        let planar = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
        ];
        assert!(matches!(
            SceneModel::new(planar, vec![], 1.0, 1.0),
            Err(SimError::CoplanarModel)
        ));
        assert!(matches!(
            SceneModel::new(vec![Vector3::zeros(); 3], vec![], 1.0, 1.0),
            Err(SimError::InsufficientKeypoints(3))
        ));
        let kp = tetra().keypoints().to_vec();
        assert!(SceneModel::new(kp, vec![(0, 4)], 1.0, 1.0).is_err());
        let cube = SceneModel::cuboid(Vector3::new(0.2, 0.1, 0.3), 1.0, 1.0).unwrap();
        assert_eq!(cube.len(), 8);
        assert_eq!(cube.edges().len(), 12);
        for &(a, b) in cube.edges() {
            let d = cube.keypoints()[a] - cube.keypoints()[b];
            // each edge is parallel to one axis
            assert_eq!(d.iter().filter(|v| v.abs() > 0.0).count(), 1);
        }
    }

    #[test]
    fn segment_distance_cases() {
        let a = Vector2::new(0.0, 0.0);
        let b = Vector2::new(10.0, 0.0);
        assert_eq!(segment_distance(Vector2::new(5.0, 3.0), a, b), 3.0);
        assert_eq!(segment_distance(Vector2::new(-3.0, 4.0), a, b), 5.0);
        assert_eq!(segment_distance(Vector2::new(13.0, 4.0), a, b), 5.0);
    }
}
