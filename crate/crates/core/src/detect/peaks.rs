use super::{DetectError, Heatmap, Keypoint, KeypointSet};
use crate::events::TimeSurfacePair;
use crate::raster::Raster;

/// Per-channel argmax. Ties go to the smallest row-major index; a peak not
/// above `floor` yields an invalid keypoint.
pub fn extract_peaks(heatmaps: &Heatmap, floor: f64) -> KeypointSet {
    let w = heatmaps.width();
    let points = (0..heatmaps.channels())
        .map(|k| {
            let ch = heatmaps.channel(k);
            let mut best = 0usize;
            for (i, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = i;
                }
            }
            match ch.get(best) {
                Some(&peak) => Keypoint {
                    x: (best % w) as f64,
                    y: (best / w) as f64,
                    confidence: peak,
                    valid: peak > floor,
                },
                None => Keypoint::invalid(),
            }
        })
        .collect();
    KeypointSet::new(points)
}

/// A `(2r+1)²` window cut from a raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub data: Raster<f64>,
    /// Full-image coordinates of patch cell (0, 0).
    pub origin: (i64, i64),
}

/// Window of radius `r` centred on `center`, zero-padded past the borders.
pub fn slice_patch(image: &Raster<f64>, center: (i64, i64), r: usize) -> Result<Patch, DetectError> {
    if r == 0 {
        return Err(DetectError::InvalidRadius);
    }
    let n = 2 * r + 1;
    let origin = (center.0 - r as i64, center.1 - r as i64);
    let data = Raster::from_fn(n, n, |x, y| image.get_or_zero(origin.0 + x as i64, origin.1 + y as i64));
    Ok(Patch { data, origin })
}

/// Writes a (refined) patch back at its origin; cells outside the image are dropped.
pub fn stitch_patch(image: &mut Raster<f64>, patch: &Patch) {
    let (w, h) = image.dims();
    for py in 0..patch.data.height() {
        for px in 0..patch.data.width() {
            let x = patch.origin.0 + px as i64;
            let y = patch.origin.1 + py as i64;
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                image.set(x as usize, y as usize, patch.data.get(px, py));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityPeakParams {
    /// Number of keypoints to return.
    pub k: usize,
    /// Minimum pairwise distance between accepted maxima (px).
    pub min_separation: f64,
    /// Maxima must exceed this fraction of the global density maximum.
    pub floor_fraction: f64,
}

impl Default for DensityPeakParams {
    fn default() -> Self {
        Self {
            k: 8,
            min_separation: 8.0,
            floor_fraction: 0.1,
        }
    }
}

/// Greedy selection of the `k` strongest density local maxima that are at
/// least `min_separation` apart. Missing slots are returned invalid.
pub fn detect_density_peaks(surfaces: &TimeSurfacePair, params: &DensityPeakParams) -> KeypointSet {
    let d = &surfaces.density;
    let (w, h) = d.dims();
    let global = d.max_value();
    let mut out: Vec<Keypoint> = Vec::with_capacity(params.k);
    if global > 0.0 {
        let floor = params.floor_fraction * global;
        let mut maxima: Vec<(f64, usize, usize)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = d.get(x, y);
                if v <= floor || v <= 0.0 {
                    continue;
                }
                let mut is_max = true;
                'nb: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx, dy) != (0, 0) {
                            let nx = x as i64 + dx;
                            let ny = y as i64 + dy;
                            if nx >= 0
                                && ny >= 0
                                && (nx as usize) < w
                                && (ny as usize) < h
                                && d.get(nx as usize, ny as usize) > v
                            {
                                is_max = false;
                                break 'nb;
                            }
                        }
                    }
                }
                if is_max {
                    maxima.push((v, x, y));
                }
            }
        }
        // descending value, then row-major
        maxima.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        let sep2 = params.min_separation * params.min_separation;
        for (v, x, y) in maxima {
            if out.len() == params.k {
                break;
            }
            let gx = (x as i64 + surfaces.origin.0) as f64;
            let gy = (y as i64 + surfaces.origin.1) as f64;
            if out.iter().all(|p| (p.x - gx).powi(2) + (p.y - gy).powi(2) >= sep2) {
                out.push(Keypoint::valid(gx, gy, v / global));
            }
        }
    }
    out.resize(params.k, Keypoint::invalid());
    KeypointSet::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::TimeWindow;

    fn delta(w: usize, h: usize, at: &[(usize, usize, f64)]) -> Heatmap {
        let mut hm = Heatmap::zeros(1, w, h);
        for &(x, y, v) in at {
            hm.set(0, x, y, v);
        }
        hm
    }

    #[test]
    fn delta_heatmap_peak() {
        let kp = extract_peaks(&delta(32, 32, &[(10, 20, 1.0)]), 0.1);
        assert_eq!(kp.points[0], Keypoint::valid(10.0, 20.0, 1.0));
    }

    #[test]
    fn ties_resolve_row_major() {
        let kp = extract_peaks(&delta(10, 10, &[(7, 7, 0.5), (3, 3, 0.5)]), 0.1);
        assert_eq!((kp.points[0].x, kp.points[0].y), (3.0, 3.0));
        let kp = extract_peaks(&delta(10, 10, &[(2, 4, 0.5), (8, 3, 0.5)]), 0.1);
        assert_eq!((kp.points[0].x, kp.points[0].y), (8.0, 3.0));
    }

    #[test]
    fn zero_channel_is_invalid() {
        let kp = extract_peaks(&Heatmap::zeros(3, 8, 8), 0.1);
        assert_eq!(kp.len(), 3);
        assert!(kp.points.iter().all(|p| !p.valid));
    }

    #[test]
    fn sampled_gaussian_argmax_is_nearest_grid_point() {
        let (cx, cy) = (31.0, 17.0);
        let mut hm = Heatmap::zeros(1, 64, 48);
        for y in 0..48 {
            for x in 0..64 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                hm.set(0, x, y, (-d2 / 8.0).exp());
            }
        }
        // brute force over the samples
        let mut best = (0, 0, f64::MIN);
        for y in 0..48 {
            for x in 0..64 {
                if hm.get(0, x, y) > best.2 {
                    best = (x, y, hm.get(0, x, y));
                }
            }
        }
        assert_eq!((best.0, best.1), (31, 17));
        let kp = extract_peaks(&hm, 0.1);
        assert_eq!((kp.points[0].x, kp.points[0].y), (31.0, 17.0));
    }

    #[test]
    fn patch_border_is_zero_padded() {
        let img = Raster::filled(10, 10, 2.0);
        let p = slice_patch(&img, (0, 0), 2).unwrap();
        assert_eq!(p.data.dims(), (5, 5));
        assert_eq!(p.origin, (-2, -2));
        for y in 0..5 {
            for x in 0..5 {
                let expect = if x < 2 || y < 2 { 0.0 } else { 2.0 };
                assert_eq!(p.data.get(x, y), expect);
            }
        }
    }

    #[test]
    fn interior_patch_is_exact_copy() {
        let img = Raster::from_fn(20, 20, |x, y| (x * 100 + y) as f64);
        let p = slice_patch(&img, (10, 9), 3).unwrap();
        assert_eq!(p.data.dims(), (7, 7));
        for y in 0..7 {
            for x in 0..7 {
                assert_eq!(p.data.get(x, y), img.get(7 + x, 6 + y));
            }
        }
        assert!(slice_patch(&img, (5, 5), 0).is_err());
    }

    #[test]
    fn stitch_round_trips_interior_patch() {
        let img = Raster::from_fn(12, 12, |x, y| (x + y) as f64);
        let mut patch = slice_patch(&img, (11, 11), 2).unwrap();
        for v in patch.data.as_mut_slice() {
            *v += 1.0;
        }
        let mut out = img.clone();
        stitch_patch(&mut out, &patch);
        assert_eq!(out.get(11, 11), img.get(11, 11) + 1.0);
        assert_eq!(out.get(8, 8), img.get(8, 8));
    }

    fn surfaces_with_density(d: Raster<f64>) -> TimeSurfacePair {
        let (w, h) = d.dims();
        TimeSurfacePair {
            t_pos: Raster::zeros(w, h),
            t_neg: Raster::zeros(w, h),
            density: d,
            window: TimeWindow::new(0, 1).unwrap(),
            origin: (0, 0),
        }
    }

    fn bumps(w: usize, h: usize, centers: &[(f64, f64, f64)]) -> Raster<f64> {
        Raster::from_fn(w, h, |x, y| {
            centers
                .iter()
                .map(|&(cx, cy, a)| a * (-((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / 4.5).exp())
                .sum()
        })
    }

    #[test]
    fn density_peaks_find_separated_bumps() {
        let centers = [
            (10.3, 12.0, 1.0),
            (40.0, 8.6, 0.9),
            (25.5, 30.2, 0.8),
            (50.0, 35.0, 0.7),
        ];
        let s = surfaces_with_density(bumps(64, 48, &centers));
        let kp = detect_density_peaks(
            &s,
            &DensityPeakParams {
                k: 4,
                min_separation: 6.0,
                floor_fraction: 0.1,
            },
        );
        assert_eq!(kp.valid_count(), 4);
        for (p, c) in kp.points.iter().zip(&centers) {
            assert!((p.x - c.0).abs() <= 1.0 && (p.y - c.1).abs() <= 1.0, "{p:?} vs {c:?}");
        }
    }

    #[test]
    fn density_peaks_all_zero_and_suppression() {
        let s = surfaces_with_density(Raster::zeros(16, 16));
        let kp = detect_density_peaks(&s, &DensityPeakParams::default());
        assert_eq!(kp.len(), 8);
        assert_eq!(kp.valid_count(), 0);

        // second bump sits 4 px from the taller one; min separation 6
        let s = surfaces_with_density(bumps(40, 40, &[(20.0, 20.0, 1.0), (24.0, 20.0, 0.6)]));
        let d = &s.density;
        // the smaller bump is still a local maximum of its own
        assert!(d.get(24, 20) > d.get(23, 20) && d.get(24, 20) > d.get(25, 20));
        let kp = detect_density_peaks(
            &s,
            &DensityPeakParams {
                k: 2,
                min_separation: 6.0,
                floor_fraction: 0.0,
            },
        );
        assert_eq!(kp.valid_count(), 1);
        assert_eq!((kp.points[0].x, kp.points[0].y), (20.0, 20.0));
    }
}
