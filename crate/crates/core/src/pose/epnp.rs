//! Efficient perspective-n-point with Gauss-Newton refinement of the
//! control-point scale factors.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SymmetricEigen, Vector2, Vector3, Vector4};

use super::PoseError;
use crate::camera::CameraIntrinsics;
use crate::se3::{PoseSE3, ROTATION_TOLERANCE};

/// Relative eigenvalue below which the point cloud is flat along that axis.
const FLAT_RATIO: f64 = 1e-10;
const GN_ITERATIONS: usize = 10;
const GN_STEP_TOL: f64 = 1e-10;

/// Outcome of one scale-factor case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateReport {
    /// Number of null-space vectors combined.
    pub dimension: usize,
    /// Reprojection RMS in pixels (infinite if the case failed).
    pub rms: f64,
    pub in_front: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpnpSolution {
    pub pose: PoseSE3,
    pub rms: f64,
    pub candidates: Vec<CandidateReport>,
}

struct ControlFrame {
    /// Object-frame control points (3 when the points are coplanar).
    points: Vec<Vector3<f64>>,
    /// Barycentric weights, one row per input point.
    alphas: Vec<Vec<f64>>,
}

fn control_frame(pts: &[Vector3<f64>]) -> Result<ControlFrame, PoseError> {
    let n = pts.len() as f64;
    let c0 = pts.iter().sum::<Vector3<f64>>() / n;
    let cov = pts
        .iter()
        .fold(Matrix3::zeros(), |acc, p| acc + (p - c0) * (p - c0).transpose())
        / n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lmax = eig.eigenvalues[order[0]];
    if lmax <= 0.0 || eig.eigenvalues[order[1]] <= FLAT_RATIO * lmax {
        return Err(PoseError::Degenerate);
    }
    let planar = eig.eigenvalues[order[2]] <= FLAT_RATIO * lmax;
    let axes = if planar { 2 } else { 3 };
    let mut points = vec![c0];
    let mut basis = Vec::with_capacity(axes);
    for &k in &order[..axes] {
        let dir = eig.eigenvectors.column(k) * eig.eigenvalues[k].sqrt();
        points.push(c0 + dir);
        basis.push(dir.into_owned());
    }
    // orthogonal basis: coordinates are projections scaled by squared lengths
    let alphas = pts
        .iter()
        .map(|p| {
            let d = p - c0;
            let mut a = vec![0.0; axes + 1];
            for (j, b) in basis.iter().enumerate() {
                a[j + 1] = d.dot(b) / b.norm_squared();
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();
    Ok(ControlFrame { points, alphas })
}

/// Smallest-eigenvalue eigenvectors of `MᵀM`, ascending.
fn null_space(frame: &ControlFrame, normalized: &[Vector2<f64>]) -> Vec<DVector<f64>> {
    let nc = frame.points.len();
    let mut m = DMatrix::<f64>::zeros(2 * normalized.len(), 3 * nc);
    for (i, (a, uv)) in frame.alphas.iter().zip(normalized).enumerate() {
        for j in 0..nc {
            m[(2 * i, 3 * j)] = a[j];
            m[(2 * i, 3 * j + 2)] = -a[j] * uv.x;
            m[(2 * i + 1, 3 * j + 1)] = a[j];
            m[(2 * i + 1, 3 * j + 2)] = -a[j] * uv.y;
        }
    }
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * nc).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order
        .iter()
        .take(nc)
        .map(|&k| eig.eigenvectors.column(k).into_owned())
        .collect()
}

fn control_point(v: &DVector<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
}

fn pairs(nc: usize) -> Vec<(usize, usize)> {
    (0..nc).flat_map(|a| (a + 1..nc).map(move |b| (a, b))).collect()
}

/// `w[p][k]`: difference of control points for pair `p` under null vector `k`.
fn pair_differences(kernel: &[DVector<f64>], prs: &[(usize, usize)]) -> Vec<Vec<Vector3<f64>>> {
    prs.iter()
        .map(|&(a, b)| {
            kernel
                .iter()
                .map(|v| control_point(v, a) - control_point(v, b))
                .collect()
        })
        .collect()
}

fn lstsq(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    a.svd(true, true).solve(&b, 1e-14).ok()
}

/// Linearized initial guess for the scale factors of the first `n` null vectors.
fn initial_betas(w: &[Vec<Vector3<f64>>], d2: &[f64], n: usize) -> Option<Vec<f64>> {
    let rows = w.len();
    match n {
        1 => {
            let num: f64 = w.iter().zip(d2).map(|(wp, d)| wp[0].norm() * d.sqrt()).sum();
            let den: f64 = w.iter().map(|wp| wp[0].norm_squared()).sum();
            (den > 0.0).then(|| vec![num / den])
        }
        2 => {
            let a = DMatrix::from_fn(rows, 3, |p, c| match c {
                0 => w[p][0].dot(&w[p][0]),
                1 => 2.0 * w[p][0].dot(&w[p][1]),
                _ => w[p][1].dot(&w[p][1]),
            });
            let x = lstsq(a, DVector::from_column_slice(d2))?;
            let b1 = x[0].abs().sqrt();
            let b2 = x[2].abs().sqrt() * x[1].signum();
            Some(vec![b1, b2])
        }
        _ => {
            // products of the first factor with every factor
            let a = DMatrix::from_fn(rows, n, |p, c| {
                if c == 0 {
                    w[p][0].dot(&w[p][0])
                } else {
                    2.0 * w[p][0].dot(&w[p][c])
                }
            });
            let x = lstsq(a, DVector::from_column_slice(d2))?;
            let b1 = x[0].abs().sqrt();
            if b1 == 0.0 {
                return None;
            }
            let mut b = vec![b1];
            b.extend(x.iter().skip(1).map(|v| v / b1));
            Some(b)
        }
    }
}

fn refine_betas(w: &[Vec<Vector3<f64>>], d2: &[f64], betas: &mut [f64]) {
    let n = betas.len();
    for _ in 0..GN_ITERATIONS {
        let mut jac = DMatrix::<f64>::zeros(w.len(), n);
        let mut res = DVector::<f64>::zeros(w.len());
        for (p, wp) in w.iter().enumerate() {
            let s: Vector3<f64> = (0..n).map(|k| wp[k] * betas[k]).sum();
            res[p] = d2[p] - s.norm_squared();
            for k in 0..n {
                jac[(p, k)] = 2.0 * s.dot(&wp[k]);
            }
        }
        let Some(step) = lstsq(jac, res) else { return };
        for (b, s) in betas.iter_mut().zip(step.iter()) {
            *b += s;
        }
        if step.norm() < GN_STEP_TOL {
            return;
        }
    }
}

/// Rigid transform taking `src` points onto `dst` points (unit-quaternion closed form).
pub fn absolute_orientation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> PoseSE3 {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let s = src
        .iter()
        .zip(dst)
        .fold(Matrix3::zeros(), |acc, (a, b)| acc + (a - cs) * (b - cd).transpose());
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy,        szx - sxz,        sxy - syx,
        syz - szy,       sxx - syy - szz,  sxy + syx,        szx + sxz,
        szx - sxz,       sxy + syx,        -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,        syz + szy,        -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(nmat);
    let k = eig.eigenvalues.imax();
    let q: Vector4<f64> = eig.eigenvectors.column(k).into_owned();
    let rot = PoseSE3::from_quaternion([q[0], q[1], q[2], q[3]], Vector3::zeros()).rotation;
    PoseSE3::new(rot, cd - rot * cs)
}

/// Pixel reprojection RMS of `pose` over the correspondences.
pub fn reprojection_rms(
    pose: &PoseSE3,
    points_2d: &[Vector2<f64>],
    points_3d: &[Vector3<f64>],
    cam: &CameraIntrinsics,
) -> f64 {
    let sq: f64 = points_2d
        .iter()
        .zip(points_3d)
        .map(|(uv, p)| (cam.project(&pose.transform_point(p)) - uv).norm_squared())
        .sum();
    (sq / points_2d.len() as f64).sqrt()
}

/// Pose of the object frame in the camera frame from `n ≥ 4` correspondences.
pub fn solve_epnp(
    points_2d: &[Vector2<f64>],
    points_3d: &[Vector3<f64>],
    cam: &CameraIntrinsics,
) -> Result<EpnpSolution, PoseError> {
    if points_2d.len() != points_3d.len() {
        return Err(PoseError::LengthMismatch {
            points_2d: points_2d.len(),
            points_3d: points_3d.len(),
        });
    }
    if points_3d.len() < 4 {
        return Err(PoseError::InsufficientCorrespondences(points_3d.len()));
    }
    let frame = control_frame(points_3d)?;
    let normalized: Vec<Vector2<f64>> = points_2d.iter().map(|uv| cam.normalize(uv)).collect();
    let kernel = null_space(&frame, &normalized);
    let nc = frame.points.len();
    let prs = pairs(nc);
    let d2: Vec<f64> = prs
        .iter()
        .map(|&(a, b)| (frame.points[a] - frame.points[b]).norm_squared())
        .collect();
    let w = pair_differences(&kernel, &prs);

    let mut best: Option<(PoseSE3, f64)> = None;
    let mut candidates = Vec::with_capacity(nc);
    for dim in 1..=nc {
        let report = |rms, in_front| CandidateReport {
            dimension: dim,
            rms,
            in_front,
        };
        let Some(mut betas) = initial_betas(&w, &d2, dim) else {
            candidates.push(report(f64::INFINITY, false));
            continue;
        };
        refine_betas(&w, &d2, &mut betas);
        let ctrl: Vec<Vector3<f64>> = (0..nc)
            .map(|j| (0..dim).map(|k| control_point(&kernel[k], j) * betas[k]).sum())
            .collect();
        let mut cam_pts: Vec<Vector3<f64>> = frame
            .alphas
            .iter()
            .map(|a| (0..nc).map(|j| ctrl[j] * a[j]).sum())
            .collect();
        // the null-space sign is arbitrary; the scene must sit in front
        if cam_pts.iter().map(|p| p.z).sum::<f64>() < 0.0 {
            cam_pts.iter_mut().for_each(|p| *p = -*p);
        }
        let mut pose = absolute_orientation(points_3d, &cam_pts);
        if !pose.is_valid(ROTATION_TOLERANCE) {
            pose = pose.orthonormalized();
        }
        let in_front = points_3d.iter().all(|p| pose.transform_point(p).z > 0.0);
        let rms = reprojection_rms(&pose, points_2d, points_3d, cam);
        let rms = if rms.is_finite() { rms } else { f64::INFINITY };
        candidates.push(report(rms, in_front));
        if in_front && rms.is_finite() && best.is_none_or(|b| rms < b.1) {
            best = Some((pose, rms));
        }
    }
    let (pose, rms) = best.ok_or(PoseError::BehindCamera)?;
    Ok(EpnpSolution { pose, rms, candidates })
}
