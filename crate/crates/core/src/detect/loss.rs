//! Structure-aware keypoint heatmap loss and its components.
//!
//! All reductions use pairwise summation in a fixed order so results are
//! reproducible regardless of batch size.

use super::{DetectError, Heatmap, KeypointSet};
use crate::raster::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    /// Unvalidated defaults; tune per dataset.
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.05,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self, DetectError> {
        let w = [lambda1, lambda2, lambda3];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return Err(DetectError::InvalidWeights);
        }
        Ok(Self {
            lambda1,
            lambda2,
            lambda3,
        })
    }
}

/// Network-style outputs for a batch: heatmaps and the keypoints read from them.
#[derive(Debug, Clone, Copy)]
pub struct KeypointBatch<'a> {
    pub heatmaps: &'a [Heatmap],
    pub keypoints: &'a [KeypointSet],
}

fn check_heatmaps(pred: &[Heatmap], truth: &[Heatmap]) -> Result<(), DetectError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(DetectError::ShapeMismatch(format!(
            "batch sizes {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    for (b, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.shape() != t.shape() {
            return Err(DetectError::ShapeMismatch(format!(
                "batch {b}: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
    }
    if pred.iter().any(|p| p.shape() != pred[0].shape()) {
        return Err(DetectError::ShapeMismatch(
            "heatmap shapes vary across the batch".into(),
        ));
    }
    Ok(())
}

fn check_keypoints(pred: &[KeypointSet], truth: &[KeypointSet]) -> Result<usize, DetectError> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(DetectError::ShapeMismatch(format!(
            "batch sizes {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let k = pred[0].len();
    if k == 0 || pred.iter().chain(truth).any(|s| s.len() != k) {
        return Err(DetectError::ShapeMismatch("keypoint counts differ".into()));
    }
    Ok(k)
}

/// Mean squared error over all `B·K·H·W` heatmap cells.
pub fn loss_heatmap(pred: &[Heatmap], truth: &[Heatmap]) -> Result<f64, DetectError> {
    check_heatmaps(pred, truth)?;
    let sq: Vec<f64> = pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.as_slice().iter().zip(t.as_slice()).map(|(a, b)| (a - b) * (a - b)))
        .collect();
    Ok(pairwise_sum(&sq) / sq.len() as f64)
}

/// ∂L_heatmap/∂pred.
pub fn loss_heatmap_grad(pred: &[Heatmap], truth: &[Heatmap]) -> Result<Vec<Heatmap>, DetectError> {
    check_heatmaps(pred, truth)?;
    let n = (pred.len() * pred[0].as_slice().len()) as f64;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let mut g = p.clone();
            for (gv, tv) in g.as_mut_slice().iter_mut().zip(t.as_slice()) {
                *gv = 2.0 * (*gv - tv) / n;
            }
            g
        })
        .collect())
}

/// Mean over `B·K` keypoints of the L1 distance `|Δx| + |Δy|`.
pub fn loss_coord(pred: &[KeypointSet], truth: &[KeypointSet]) -> Result<f64, DetectError> {
    let k = check_keypoints(pred, truth)?;
    let terms: Vec<f64> = pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| {
            p.points
                .iter()
                .zip(&t.points)
                .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs())
        })
        .collect();
    Ok(pairwise_sum(&terms) / (pred.len() * k) as f64)
}

/// Subgradient of [`loss_coord`] w.r.t. each predicted `(x, y)`; `sign(0) = 0`.
pub fn loss_coord_grad(pred: &[KeypointSet], truth: &[KeypointSet]) -> Result<Vec<Vec<[f64; 2]>>, DetectError> {
    let k = check_keypoints(pred, truth)?;
    let n = (pred.len() * k) as f64;
    let sign = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            p.points
                .iter()
                .zip(&t.points)
                .map(|(a, b)| [sign(a.x - b.x) / n, sign(a.y - b.y) / n])
                .collect()
        })
        .collect())
}

/// Full `K × K` Euclidean distance matrix, row-major.
pub fn pairwise_distances(set: &KeypointSet) -> Vec<f64> {
    let k = set.len();
    let mut d = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (a, b) = (&set.points[i], &set.points[j]);
            d[i * k + j] = (a.x - b.x).hypot(a.y - b.y);
        }
    }
    d
}

/// Mean over the batch of the entrywise L1 difference of distance matrices.
pub fn loss_structure(pred: &[KeypointSet], truth: &[KeypointSet]) -> Result<f64, DetectError> {
    check_keypoints(pred, truth)?;
    let per_batch: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let diff: Vec<f64> = pairwise_distances(p)
                .iter()
                .zip(pairwise_distances(t))
                .map(|(a, b)| (a - b).abs())
                .collect();
            pairwise_sum(&diff)
        })
        .collect();
    Ok(pairwise_sum(&per_batch) / pred.len() as f64)
}

/// `λ₁·L_heatmap + λ₂·L_coord + λ₃·L_structure`.
pub fn loss_sakhl(
    pred: &KeypointBatch<'_>,
    truth: &KeypointBatch<'_>,
    weights: &LossWeights,
) -> Result<f64, DetectError> {
    let h = loss_heatmap(pred.heatmaps, truth.heatmaps)?;
    let c = loss_coord(pred.keypoints, truth.keypoints)?;
    let s = loss_structure(pred.keypoints, truth.keypoints)?;
    Ok(weights.lambda1 * h + weights.lambda2 * c + weights.lambda3 * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pts: &[(f64, f64)]) -> KeypointSet {
        KeypointSet::from_positions(pts)
    }

    #[test]
    fn heatmap_constant_offset() {
        let t = Heatmap::new(2, 3, 2, vec![0.1; 12]).unwrap();
        let p = Heatmap::new(2, 3, 2, vec![0.6; 12]).unwrap();
        assert!((loss_heatmap(&[p], std::slice::from_ref(&t)).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(
            loss_heatmap(std::slice::from_ref(&t), std::slice::from_ref(&t)).unwrap(),
            0.0
        );
    }

    #[test]
    fn heatmap_shape_mismatch_is_error() {
        let a = Heatmap::zeros(1, 4, 4);
        let b = Heatmap::zeros(1, 4, 5);
        assert!(matches!(
            loss_heatmap(std::slice::from_ref(&a), &[b]),
            Err(DetectError::ShapeMismatch(_))
        ));
        assert!(loss_heatmap(&[a.clone(), a.clone()], &[a]).is_err());
    }

    #[test]
    fn coord_single_offset() {
        let l = loss_coord(&[set(&[(3.0, 4.0)])], &[set(&[(0.0, 0.0)])]).unwrap();
        assert_eq!(l, 7.0);
        assert_eq!(loss_coord(&[set(&[(1.0, 2.0)])], &[set(&[(1.0, 2.0)])]).unwrap(), 0.0);
    }

    #[test]
    fn structure_two_points() {
        // truth distance 5, prediction distance 8: both off-diagonal entries differ by 3
        let truth = set(&[(0.0, 0.0), (3.0, 4.0)]);
        let pred = set(&[(0.0, 0.0), (8.0, 0.0)]);
        assert!((loss_structure(&[pred], &[truth]).unwrap() - 6.0).abs() < 1e-15);
    }

    #[test]
    fn structure_ignores_translation() {
        let truth = set(&[(0.0, 0.0), (3.0, 4.0), (-2.0, 7.0)]);
        let pred = set(&[(10.0, -5.0), (13.0, -1.0), (8.0, 2.0)]);
        assert!(loss_structure(&[pred], &[truth]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn weights_validation_and_projection() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        let w = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        let hp = [Heatmap::new(1, 2, 1, vec![0.3, 0.9]).unwrap()];
        let ht = [Heatmap::new(1, 2, 1, vec![0.1, 0.2]).unwrap()];
        let kp = [set(&[(1.0, 1.0)])];
        let kt = [set(&[(4.0, 1.0)])];
        let pred = KeypointBatch {
            heatmaps: &hp,
            keypoints: &kp,
        };
        let truth = KeypointBatch {
            heatmaps: &ht,
            keypoints: &kt,
        };
        assert_eq!(loss_sakhl(&pred, &truth, &w).unwrap(), loss_heatmap(&hp, &ht).unwrap());
        assert_eq!(loss_sakhl(&truth, &truth, &LossWeights::default()).unwrap(), 0.0);
    }
}
