//! Rigid-body transforms and timestamped pose trajectories.
//!
//! A [`PoseSE3`] maps object-frame points into the camera frame:
//! `X_cam = R · X_obj + t`. Trajectories are sequences of such poses with
//! strictly increasing integer-microsecond timestamps.

use std::io::{Read, Write};
use std::ops::Mul;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

/// Orthonormality / determinant tolerance for a valid rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory timestamps must be strictly increasing (sample {index}: {prev} -> {next} us)")]
    NotIncreasing { index: usize, prev: u64, next: u64 },
    #[error("pose at sample {0} is not a valid rigid transform")]
    InvalidPose(usize),
    #[error("trajectory is empty")]
    Empty,
    #[error("time {0} us is outside the trajectory span")]
    OutOfSpan(u64),
    #[error("trajectory csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), translation)
    }

    /// Rotation given as a rotation vector (axis · angle, radians).
    pub fn from_rotation_vector(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let r = Rotation3::new(rotvec);
        Self::new(*r.matrix(), translation)
    }

    /// Hamilton unit quaternion `(w, x, y, z)`; the input is normalized.
    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>) -> Self {
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(*uq.to_rotation_matrix().matrix(), translation)
    }

    /// Hamilton unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let uq = self.unit_quaternion();
        let q = uq.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Geodesic rotation angle of `R` in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Rotation angle between the two poses' orientations (radians).
    pub fn rotation_distance(&self, other: &PoseSE3) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn translation_distance(&self, other: &PoseSE3) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// `RᵀR = I` and `det R = +1` within `tol`, all entries finite.
    pub fn is_valid(&self, tol: f64) -> bool {
        if !self
            .rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return false;
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        err <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Re-projects the rotation block onto SO(3) if it drifted beyond the tolerance.
    pub fn orthonormalized(&self) -> Self {
        if self.is_valid(ROTATION_TOLERANCE) {
            return *self;
        }
        Self::new(nearest_rotation(&self.rotation), self.translation)
    }

    /// Translation lerp + rotation slerp, `s ∈ [0, 1]`.
    pub fn interpolate(&self, other: &PoseSE3, s: f64) -> PoseSE3 {
        let qa = self.unit_quaternion();
        let qb = other.unit_quaternion();
        // the library slerp does not renormalize; small arcs drift off the unit sphere
        let q = UnitQuaternion::new_normalize(qa.slerp(&qb, s).into_inner());
        PoseSE3::new(
            *q.to_rotation_matrix().matrix(),
            self.translation * (1.0 - s) + other.translation * s,
        )
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a PoseSE3> for &'a PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: &'a PoseSE3) -> PoseSE3 {
        self.compose(rhs)
    }
}

/// Geodesic angle of a rotation matrix.
///
/// Mathematically `acos((tr R − 1) / 2)`; evaluated through `atan2` of the
/// skew part so that near-identity rotations keep full precision and no NaN
/// can arise from a trace slightly outside `[−1, 3]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axis = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = (0.5 * axis.norm()).min(1.0);
    sin.atan2(cos)
}

/// Closest rotation in Frobenius norm (polar decomposition via SVD).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    r
}

/// Rotation about a unit axis.
pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t_us: u64,
    pub pose: PoseSE3,
}

/// Timestamped pose sequence with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    samples: Vec<TimedPose>,
}

impl Trajectory {
    pub fn new(samples: Vec<TimedPose>) -> Result<Self, TrajectoryError> {
        for (i, s) in samples.iter().enumerate() {
            if !s.pose.is_valid(ROTATION_TOLERANCE) {
                return Err(TrajectoryError::InvalidPose(i));
            }
            if i > 0 && samples[i - 1].t_us >= s.t_us {
                return Err(TrajectoryError::NotIncreasing {
                    index: i,
                    prev: samples[i - 1].t_us,
                    next: s.t_us,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TimedPose] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_us(&self) -> Option<u64> {
        self.samples.first().map(|s| s.t_us)
    }

    pub fn end_us(&self) -> Option<u64> {
        self.samples.last().map(|s| s.t_us)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = u64> + '_ {
        self.samples.iter().map(|s| s.t_us)
    }

    pub fn poses(&self) -> impl Iterator<Item = &PoseSE3> + '_ {
        self.samples.iter().map(|s| &s.pose)
    }

    /// Pose at `t_us`: translation lerp and rotation slerp between bracketing samples.
    pub fn sample_at(&self, t_us: u64) -> Result<PoseSE3, TrajectoryError> {
        let first = self.samples.first().ok_or(TrajectoryError::Empty)?;
        let last = self.samples.last().unwrap();
        if t_us < first.t_us || t_us > last.t_us {
            return Err(TrajectoryError::OutOfSpan(t_us));
        }
        let idx = self.samples.partition_point(|s| s.t_us <= t_us);
        // idx ≥ 1 because first.t_us ≤ t_us
        let a = &self.samples[idx - 1];
        if a.t_us == t_us || idx == self.samples.len() {
            return Ok(a.pose);
        }
        let b = &self.samples[idx];
        let s = (t_us - a.t_us) as f64 / (b.t_us - a.t_us) as f64;
        Ok(a.pose.interpolate(&b.pose, s))
    }

    /// Resamples onto `times`, dropping times outside this trajectory's span.
    pub fn resample(&self, times: impl IntoIterator<Item = u64>) -> Result<Trajectory, TrajectoryError> {
        let (start, end) = match (self.start_us(), self.end_us()) {
            (Some(s), Some(e)) => (s, e),
            _ => return Err(TrajectoryError::Empty),
        };
        let mut out = Vec::new();
        for t in times {
            if t < start || t > end {
                continue;
            }
            out.push(TimedPose {
                t_us: t,
                pose: self.sample_at(t)?.orthonormalized(),
            });
        }
        Trajectory::new(out)
    }

    /// Left-multiplies every pose by `g`.
    pub fn left_multiplied(&self, g: &PoseSE3) -> Trajectory {
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|s| TimedPose {
                    t_us: s.t_us,
                    pose: g.compose(&s.pose),
                })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_us,tx,ty,tz,qw,qx,qy,qz")?;
        for s in &self.samples {
            let q = s.pose.quaternion();
            let t = s.pose.translation;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.t_us, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Trajectory, TrajectoryError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(r);
        let mut samples = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| TrajectoryError::Parse {
                line,
                msg: e.to_string(),
            })?;
            if rec.get(0).is_some_and(|f| f.starts_with('t')) {
                continue;
            }
            if rec.len() != 8 {
                return Err(TrajectoryError::Parse {
                    line,
                    msg: format!("expected 8 fields, found {}", rec.len()),
                });
            }
            let t_us: u64 = rec[0].parse().map_err(|e| TrajectoryError::Parse {
                line,
                msg: format!("bad timestamp: {e}"),
            })?;
            let mut vals = [0.0; 7];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = rec[k + 1].parse().map_err(|e| TrajectoryError::Parse {
                    line,
                    msg: format!("bad field {}: {e}", k + 1),
                })?;
            }
            let pose = PoseSE3::from_quaternion(
                [vals[3], vals[4], vals[5], vals[6]],
                Vector3::new(vals[0], vals[1], vals[2]),
            );
            samples.push(TimedPose { t_us, pose });
        }
        Trajectory::new(samples)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrajectoryError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Trajectory, TrajectoryError> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
