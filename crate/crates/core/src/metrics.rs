//! Relative pose error between an estimated and a ground-truth trajectory.
//!
//! For a step `Δ`, each pair `i` yields `E_i = (Q_i⁻¹ Q_{i+Δ})⁻¹ (P_i⁻¹ P_{i+Δ})`
//! with `Q` the truth and `P` the estimate. Rotation angle and translation
//! norm of `E_i` are divided by the actual time between the two samples and
//! reduced by root mean square.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{rotation_angle, PoseSE3, Trajectory, TrajectoryError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("step delta must be at least 1")]
    InvalidDelta,
    #[error("need more than {delta} samples, have {len}")]
    TooShort { len: usize, delta: usize },
    #[error("timestamps differ at sample {index}: truth {truth} us, estimate {estimate} us")]
    Misaligned { index: usize, truth: u64, estimate: u64 },
    #[error("no relative error terms")]
    Empty,
    #[error("estimate does not overlap the truth span")]
    NoOverlap,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One relative error transform and the time it spans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeError {
    /// Timestamp of the first sample of the pair.
    pub t_us: u64,
    pub dt_s: f64,
    pub error: PoseSE3,
}

impl RelativeError {
    pub fn rotation_deg(&self) -> f64 {
        rotation_angle(&self.error.rotation).to_degrees()
    }

    pub fn translation_cm(&self) -> f64 {
        self.error.translation.norm() * 100.0
    }
}

/// Relative error transforms for every pair `(i, i + delta)`.
pub fn relative_error_terms(
    truth: &Trajectory,
    est: &Trajectory,
    delta: usize,
) -> Result<Vec<RelativeError>, MetricsError> {
    if delta == 0 {
        return Err(MetricsError::InvalidDelta);
    }
    let (q, p) = (truth.samples(), est.samples());
    if q.len() != p.len() {
        return Err(MetricsError::Misaligned {
            index: q.len().min(p.len()),
            truth: q.get(p.len()).map_or(0, |s| s.t_us),
            estimate: p.get(q.len()).map_or(0, |s| s.t_us),
        });
    }
    if let Some(i) = (0..q.len()).find(|&i| q[i].t_us != p[i].t_us) {
        return Err(MetricsError::Misaligned {
            index: i,
            truth: q[i].t_us,
            estimate: p[i].t_us,
        });
    }
    if q.len() <= delta {
        return Err(MetricsError::TooShort { len: q.len(), delta });
    }
    Ok((0..q.len() - delta)
        .map(|i| {
            let dq = q[i].pose.inverse() * q[i + delta].pose;
            let dp = p[i].pose.inverse() * p[i + delta].pose;
            RelativeError {
                t_us: q[i].t_us,
                dt_s: (q[i + delta].t_us - q[i].t_us) as f64 * 1e-6,
                error: dq.inverse() * dp,
            }
        })
        .collect())
}

fn rms(values: impl Iterator<Item = f64>) -> Result<f64, MetricsError> {
    let sq: Vec<f64> = values.map(|v| v * v).collect();
    if sq.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok((crate::raster::pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

/// Rotational drift rate, deg/s.
pub fn r_rel(terms: &[RelativeError]) -> Result<f64, MetricsError> {
    rms(terms.iter().map(|e| e.rotation_deg() / e.dt_s))
}

/// Translational drift rate, cm/s.
pub fn t_rel(terms: &[RelativeError]) -> Result<f64, MetricsError> {
    rms(terms.iter().map(|e| e.translation_cm() / e.dt_s))
}

/// Restricts the truth to the estimate's time span and interpolates the
/// estimate at those timestamps.
pub fn align_to_truth(truth: &Trajectory, est: &Trajectory) -> Result<(Trajectory, Trajectory), MetricsError> {
    let (Some(lo), Some(hi)) = (est.start_us(), est.end_us()) else {
        return Err(MetricsError::NoOverlap);
    };
    let kept: Vec<_> = truth
        .samples()
        .iter()
        .filter(|s| s.t_us >= lo && s.t_us <= hi)
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let resampled = est.resample(kept.iter().map(|s| s.t_us))?;
    Ok((Trajectory::new(kept)?, resampled))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r_rel_deg_per_s: f64,
    pub t_rel_cm_per_s: f64,
    pub m: usize,
    pub delta: usize,
    pub dt_mean_s: f64,
}

impl MetricsReport {
    pub fn from_terms(terms: &[RelativeError], delta: usize) -> Result<Self, MetricsError> {
        let dts: Vec<f64> = terms.iter().map(|e| e.dt_s).collect();
        Ok(Self {
            r_rel_deg_per_s: r_rel(terms)?,
            t_rel_cm_per_s: t_rel(terms)?,
            m: terms.len(),
            delta,
            dt_mean_s: crate::raster::pairwise_sum(&dts) / dts.len() as f64,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<(), MetricsError> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Aligns, then reports drift rates for step `delta`.
pub fn evaluate(
    truth: &Trajectory,
    est: &Trajectory,
    delta: usize,
) -> Result<(MetricsReport, Vec<RelativeError>), MetricsError> {
    let (q, p) = align_to_truth(truth, est)?;
    let terms = relative_error_terms(&q, &p, delta)?;
    Ok((MetricsReport::from_terms(&terms, delta)?, terms))
}

/// Per-step CSV: `t_us,dt_s,rot_err_deg,trans_err_cm,rot_rate_deg_per_s,trans_rate_cm_per_s`.
pub fn write_step_errors<W: Write>(terms: &[RelativeError], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "t_us,dt_s,rot_err_deg,trans_err_cm,rot_rate_deg_per_s,trans_rate_cm_per_s"
    )?;
    for e in terms {
        let (r, t) = (e.rotation_deg(), e.translation_cm());
        writeln!(
            w,
            "{},{},{:.9},{:.9},{:.9},{:.9}",
            e.t_us,
            e.dt_s,
            r,
            t,
            r / e.dt_s,
            t / e.dt_s
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{axis_angle, TimedPose};
    use nalgebra::Vector3;

    fn traj(poses: &[(u64, PoseSE3)]) -> Trajectory {
        Trajectory::new(poses.iter().map(|&(t_us, pose)| TimedPose { t_us, pose }).collect()).unwrap()
    }

    fn wiggle(n: usize) -> Trajectory {
        let v: Vec<_> = (0..n)
            .map(|i| {
                let s = i as f64 * 0.1;
                (
                    i as u64 * 10_000,
                    PoseSE3::from_rotation_vector(Vector3::new(s, 0.5 * s, -s * s), Vector3::new(s.sin(), s, 1.0 + s)),
                )
            })
            .collect();
        traj(&v)
    }

    #[test]
    fn identical_trajectories_are_exactly_zero() {
        let t = wiggle(20);
        let terms = relative_error_terms(&t, &t, 1).unwrap();
        assert_eq!(terms.len(), 19);
        assert_eq!(r_rel(&terms).unwrap(), 0.0);
        assert!(t_rel(&terms).unwrap() < 1e-12);
    }

    #[test]
    fn single_term_rates() {
        let one_deg = PoseSE3::new(axis_angle(Vector3::z(), 1f64.to_radians()), Vector3::zeros());
        let e = RelativeError {
            t_us: 0,
            dt_s: 1.0,
            error: one_deg,
        };
        assert!((r_rel(&[e]).unwrap() - 1.0).abs() < 1e-12);
        let e = RelativeError {
            t_us: 0,
            dt_s: 0.5,
            error: PoseSE3::from_translation(Vector3::new(0.03, 0.04, 0.0)),
        };
        assert!((t_rel(&[e]).unwrap() - 10.0).abs() < 1e-12);
        assert!(r_rel(&[]).is_err());
    }

    #[test]
    fn misaligned_and_short_inputs() {
        let a = wiggle(5);
        let b = traj(&[(0, PoseSE3::identity()), (1, PoseSE3::identity())]);
        assert!(matches!(
            relative_error_terms(&a, &b, 1),
            Err(MetricsError::Misaligned { .. })
        ));
        assert!(matches!(
            relative_error_terms(&a, &a, 5),
            Err(MetricsError::TooShort { .. })
        ));
        assert!(matches!(
            relative_error_terms(&a, &a, 0),
            Err(MetricsError::InvalidDelta)
        ));
    }

    #[test]
    fn alignment_interpolates_estimate() {
        let truth = wiggle(11);
        let est = traj(&[(20_000, truth.samples()[2].pose), (80_000, truth.samples()[8].pose)]);
        let (q, p) = align_to_truth(&truth, &est).unwrap();
        assert_eq!(q.len(), 7);
        assert_eq!(p.timestamps().collect::<Vec<_>>(), q.timestamps().collect::<Vec<_>>());
    }

    #[test]
    fn step_csv_header() {
        let t = wiggle(3);
        let terms = relative_error_terms(&t, &t, 1).unwrap();
        let mut buf = Vec::new();
        write_step_errors(&terms, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert!(s.starts_with("t_us,dt_s,rot_err_deg"));
    }
}
