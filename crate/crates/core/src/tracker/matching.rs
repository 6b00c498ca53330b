use crate::events::{Polarity, TimeSurfacePair};
use crate::raster::Raster;

use super::{NegativeSampling, PolarityClass, TrackerParams};

/// Best candidate found in a local surface, in sensor coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub x: i64,
    pub y: i64,
    pub score: f64,
}

/// Ratio test on the summed counts of the whole local surface.
///
/// The minimum-count rule takes precedence, so fewer than `min_events`
/// events is always `Insufficient`.
pub fn classify_polarity(surfaces: &TimeSurfacePair, eta: f64, min_events: u64) -> PolarityClass {
    let pos = surfaces.positive_total();
    let neg = surfaces.negative_total();
    let total = pos + neg;
    if total == 0 || total < min_events {
        return PolarityClass::Insufficient;
    }
    let total = total as f64;
    if pos as f64 / total > eta {
        PolarityClass::SinglePositive
    } else if neg as f64 / total > eta {
        PolarityClass::SingleNegative
    } else {
        PolarityClass::Mixed
    }
}

/// Local cell of the patch centre; odd-sized patches have an exact centre.
pub fn patch_center(surfaces: &TimeSurfacePair) -> (usize, usize) {
    ((surfaces.width() - 1) / 2, (surfaces.height() - 1) / 2)
}

/// Local cells within `search_radius` (Chebyshev) of the patch centre, clipped to the patch.
fn search_bounds(surfaces: &TimeSurfacePair, radius: usize) -> (usize, usize, usize, usize) {
    let (cx, cy) = patch_center(surfaces);
    (
        cx.saturating_sub(radius),
        (cx + radius).min(surfaces.width() - 1),
        cy.saturating_sub(radius),
        (cy + radius).min(surfaces.height() - 1),
    )
}

/// Mixed-polarity score at one local cell.
pub fn mixed_score(surfaces: &TimeSurfacePair, params: &TrackerParams, x: usize, y: usize) -> f64 {
    let (cx, cy) = patch_center(surfaces);
    let neg = match params.negative_sampling {
        NegativeSampling::Mirrored => surfaces
            .t_neg
            .get_or_zero(2 * cx as i64 - x as i64, 2 * cy as i64 - y as i64),
        NegativeSampling::Colocated => surfaces.t_neg.get(x, y),
    };
    (surfaces.t_pos.get(x, y) as f64 * neg as f64).sqrt() + params.beta * surfaces.density.get(x, y)
}

/// Argmax of the mixed score over the search region, first maximum in row-major order.
///
/// Returns `None` when every candidate scores zero.
pub fn match_mixed(surfaces: &TimeSurfacePair, params: &TrackerParams) -> Option<Match> {
    let (x0, x1, y0, y1) = search_bounds(surfaces, params.search_radius);
    let mut best: Option<(usize, usize, f64)> = None;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let s = mixed_score(surfaces, params, x, y);
            if best.is_none_or(|b| s > b.2) {
                best = Some((x, y, s));
            }
        }
    }
    let (x, y, score) = best?;
    (score > 0.0).then(|| to_sensor(surfaces, x, y, score))
}

fn window_sum(d: &Raster<f64>, x: usize, y: usize, half: usize) -> f64 {
    let mut s = 0.0;
    for v in y as i64 - half as i64..=y as i64 + half as i64 {
        for u in x as i64 - half as i64..=x as i64 + half as i64 {
            s += d.get_or_zero(u, v);
        }
    }
    s
}

fn is_window_max(d: &Raster<f64>, x: usize, y: usize, half: usize) -> bool {
    let c = d.get(x, y);
    for v in y as i64 - half as i64..=y as i64 + half as i64 {
        for u in x as i64 - half as i64..=x as i64 + half as i64 {
            if d.get_or_zero(u, v) > c {
                return false;
            }
        }
    }
    true
}

/// Single-polarity search on the dominant polarity's counts.
///
/// Feasible cells are non-zero and equal to the maximum of their small
/// window; among them the largest big-window sum wins, first in row-major
/// order. Windows are zero-padded past the patch border.
pub fn match_single(surfaces: &TimeSurfacePair, polarity: Polarity, params: &TrackerParams) -> Option<Match> {
    let d = surfaces.polarity(polarity).to_f64();
    let (x0, x1, y0, y1) = search_bounds(surfaces, params.search_radius);
    let (hb, hs) = (params.big_window / 2, params.small_window / 2);
    let mut best: Option<(usize, usize, f64)> = None;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if d.get(x, y) <= 0.0 || !is_window_max(&d, x, y, hs) {
                continue;
            }
            let s = window_sum(&d, x, y, hb);
            if best.is_none_or(|b| s > b.2) {
                best = Some((x, y, s));
            }
        }
    }
    best.map(|(x, y, s)| to_sensor(surfaces, x, y, s))
}

fn to_sensor(surfaces: &TimeSurfacePair, x: usize, y: usize, score: f64) -> Match {
    Match {
        x: x as i64 + surfaces.origin.0,
        y: y as i64 + surfaces.origin.1,
        score,
    }
}
