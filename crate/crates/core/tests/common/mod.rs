//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use evtrack::camera::CameraIntrinsics;
use evtrack::events::{Polarity, TimeSurfacePair, TimeWindow};
use evtrack::raster::Raster;
use evtrack::se3::PoseSE3;
use evtrack::tracker::{NegativeSampling, TrackerParams};
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Sparse random count patch; `fill` is the probability that a cell is non-zero.
pub fn random_patch<R: Rng>(rng: &mut R, side: usize, fill: f64, max_count: u32) -> TimeSurfacePair {
    let mut gen = || {
        Raster::from_fn(side, side, |_, _| {
            if rng.random_bool(fill) {
                rng.random_range(1..=max_count)
            } else {
                0
            }
        })
    };
    let (pos, neg) = (gen(), gen());
    TimeSurfacePair::from_counts(pos, neg, TimeWindow::new(0, 10_000).unwrap(), (200, 100), 2.0).unwrap()
}

/// Exhaustive mixed-score argmax: every cell within the Chebyshev search
/// radius of the centre, ties to the smallest (row, column).
pub fn brute_mixed(s: &TimeSurfacePair, params: &TrackerParams) -> Option<(i64, i64, f64)> {
    let (w, h) = (s.width() as i64, s.height() as i64);
    let (cx, cy) = ((w - 1) / 2, (h - 1) / 2);
    let r = params.search_radius as i64;
    let count = |raster: &Raster<u32>, x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            raster.get(x as usize, y as usize) as f64
        }
    };
    let mut cands = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (x - cx).abs() > r || (y - cy).abs() > r {
                continue;
            }
            let neg = match params.negative_sampling {
                NegativeSampling::Mirrored => count(&s.t_neg, 2 * cx - x, 2 * cy - y),
                NegativeSampling::Colocated => count(&s.t_neg, x, y),
            };
            let score = (count(&s.t_pos, x, y) * neg).sqrt() + params.beta * s.density.get(x as usize, y as usize);
            cands.push((x, y, score));
        }
    }
    let best = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    if best.is_nan() || best <= 0.0 {
        return None;
    }
    let (x, y, score) = *cands.iter().filter(|c| c.2 == best).min_by_key(|c| (c.1, c.0)).unwrap();
    Some((x + s.origin.0, y + s.origin.1, score))
}

/// Exhaustive single-polarity search: filter cells that are non-zero local
/// maxima of the small window, then maximize the big-window sum.
pub fn brute_single(s: &TimeSurfacePair, polarity: Polarity, params: &TrackerParams) -> Option<(i64, i64, f64)> {
    let d = s.polarity(polarity);
    let (w, h) = (s.width() as i64, s.height() as i64);
    let (cx, cy) = ((w - 1) / 2, (h - 1) / 2);
    let r = params.search_radius as i64;
    let at = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            d.get(x as usize, y as usize) as f64
        }
    };
    let neighbourhood = |x: i64, y: i64, side: usize| {
        let half = (side / 2) as i64;
        (-half..=half).flat_map(move |dy| (-half..=half).map(move |dx| (x + dx, y + dy)))
    };
    let mut feasible = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (x - cx).abs() > r || (y - cy).abs() > r || at(x, y) == 0.0 {
                continue;
            }
            let local_max = neighbourhood(x, y, params.small_window)
                .map(|(u, v)| at(u, v))
                .fold(0.0, f64::max);
            if at(x, y) < local_max {
                continue;
            }
            let sum: f64 = neighbourhood(x, y, params.big_window).map(|(u, v)| at(u, v)).sum();
            feasible.push((x, y, sum));
        }
    }
    let best = feasible.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let (x, y, score) = *feasible.iter().filter(|c| c.2 == best).min_by_key(|c| (c.1, c.0))?;
    Some((x + s.origin.0, y + s.origin.1, score))
}

pub fn random_rotation_vector<R: Rng>(rng: &mut R, max_angle: f64) -> Vector3<f64> {
    let axis = Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
    .normalize();
    axis * rng.random_range(0.0..max_angle)
}

pub fn random_pose<R: Rng>(rng: &mut R) -> PoseSE3 {
    let t = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    PoseSE3::from_rotation_vector(random_rotation_vector(rng, std::f64::consts::PI), t)
}

/// `n` object points in a cube of half-side `half`, placed by `pose` in
/// front of the camera; returns object points and exact projections.
pub fn random_scene<R: Rng>(
    rng: &mut R,
    n: usize,
    half: f64,
    pose: &PoseSE3,
    cam: &CameraIntrinsics,
) -> (Vec<Vector3<f64>>, Vec<Vector2<f64>>) {
    let pts: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        })
        .collect();
    let uv = pts.iter().map(|p| cam.project(&pose.transform_point(p))).collect();
    (pts, uv)
}

/// A pose looking at the origin from roughly `depth` metres.
pub fn random_camera_pose<R: Rng>(rng: &mut R, depth: f64) -> PoseSE3 {
    PoseSE3::from_rotation_vector(
        random_rotation_vector(rng, std::f64::consts::PI),
        Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), depth),
    )
}
