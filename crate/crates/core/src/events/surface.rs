use super::{check_sorted, Event, EventError, Polarity};
use crate::raster::Raster;

/// Half-open time interval `[start_us, end_us)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub start_us: u64,
    pub end_us: u64,
}

impl TimeWindow {
    pub fn new(start_us: u64, end_us: u64) -> Result<Self, EventError> {
        if end_us <= start_us {
            return Err(EventError::InvalidWindow {
                start: start_us,
                end: end_us,
            });
        }
        Ok(Self { start_us, end_us })
    }

    #[inline]
    pub fn contains(&self, t: u64) -> bool {
        t >= self.start_us && t < self.end_us
    }

    pub fn duration_us(&self) -> u64 {
        self.end_us - self.start_us
    }

    pub fn midpoint_us(&self) -> u64 {
        self.start_us + (self.end_us - self.start_us) / 2
    }
}

/// Pixel rectangle in sensor coordinates. The origin may be negative so that
/// patches centred near the border keep their full size; cells outside the
/// sensor simply never receive events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: i64,
    pub y0: i64,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn new(x0: i64, y0: i64, width: usize, height: usize) -> Self {
        Self { x0, y0, width, height }
    }

    pub fn full(width: u16, height: u16) -> Self {
        Self::new(0, 0, width as usize, height as usize)
    }

    /// Square `(2r+1)²` region centred on `(cx, cy)`.
    pub fn centered(cx: i64, cy: i64, radius: usize) -> Self {
        let r = radius as i64;
        Self::new(cx - r, cy - r, 2 * radius + 1, 2 * radius + 1)
    }

    #[inline]
    pub fn local(&self, x: i64, y: i64) -> Option<(usize, usize)> {
        let lx = x - self.x0;
        let ly = y - self.y0;
        (lx >= 0 && ly >= 0 && (lx as usize) < self.width && (ly as usize) < self.height)
            .then_some((lx as usize, ly as usize))
    }
}

/// Per-polarity windowed event counts and their blurred density.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSurfacePair {
    pub t_pos: Raster<u32>,
    pub t_neg: Raster<u32>,
    pub density: Raster<f64>,
    pub window: TimeWindow,
    /// Sensor coordinates of raster cell (0, 0).
    pub origin: (i64, i64),
}

impl TimeSurfacePair {
    pub fn width(&self) -> usize {
        self.t_pos.width()
    }

    pub fn height(&self) -> usize {
        self.t_pos.height()
    }

    pub fn positive_total(&self) -> u64 {
        self.t_pos.total()
    }

    pub fn negative_total(&self) -> u64 {
        self.t_neg.total()
    }

    /// Count raster for one polarity.
    pub fn polarity(&self, p: Polarity) -> &Raster<u32> {
        match p {
            Polarity::Positive => &self.t_pos,
            Polarity::Negative => &self.t_neg,
        }
    }

    /// Builds a pair directly from count rasters (density = blurred sum).
    pub fn from_counts(
        t_pos: Raster<u32>,
        t_neg: Raster<u32>,
        window: TimeWindow,
        origin: (i64, i64),
        blur_sigma: f64,
    ) -> Result<Self, EventError> {
        if t_pos.dims() != t_neg.dims() {
            return Err(EventError::DegenerateRegion);
        }
        if t_pos.width() == 0 || t_pos.height() == 0 {
            return Err(EventError::DegenerateRegion);
        }
        let sum = t_pos.zip_map(&t_neg, |a, b| (a + b) as f64);
        let density = gaussian_blur(&sum, blur_sigma)?;
        Ok(Self {
            t_pos,
            t_neg,
            density,
            window,
            origin,
        })
    }
}

/// Counts in-window events per polarity over `region` and blurs their sum.
///
/// Events outside the window or region are ignored. The blur is a separable
/// Gaussian truncated at 3σ whose per-source weights are renormalized at the
/// borders, so the density map carries exactly the event mass.
pub fn build_time_surfaces(
    events: &[Event],
    window: TimeWindow,
    region: Region,
    blur_sigma: f64,
) -> Result<TimeSurfacePair, EventError> {
    if region.width == 0 || region.height == 0 {
        return Err(EventError::DegenerateRegion);
    }
    if !(blur_sigma.is_finite() && blur_sigma > 0.0) {
        return Err(EventError::InvalidBlurSigma(blur_sigma));
    }
    check_sorted(events)?;
    let mut t_pos = Raster::<u32>::zeros(region.width, region.height);
    let mut t_neg = Raster::<u32>::zeros(region.width, region.height);
    let lo = events.partition_point(|e| e.t < window.start_us);
    for e in &events[lo..] {
        if e.t >= window.end_us {
            break;
        }
        if let Some((lx, ly)) = region.local(e.x as i64, e.y as i64) {
            match e.p {
                Polarity::Positive => *t_pos.get_mut(lx, ly) += 1,
                Polarity::Negative => *t_neg.get_mut(lx, ly) += 1,
            }
        }
    }
    TimeSurfacePair::from_counts(t_pos, t_neg, window, (region.x0, region.y0), blur_sigma)
}

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Mass-preserving separable Gaussian blur (scatter form, borders renormalized).
pub fn gaussian_blur(src: &Raster<f64>, sigma: f64) -> Result<Raster<f64>, EventError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(EventError::InvalidBlurSigma(sigma));
    }
    let k = kernel(sigma);
    let (w, h) = src.dims();
    let mut tmp = Raster::<f64>::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = src.get(x, y);
            if v != 0.0 {
                scatter(&k, x, w, v, |xx, a| *tmp.get_mut(xx, y) += a);
            }
        }
    }
    let mut out = Raster::<f64>::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = tmp.get(x, y);
            if v != 0.0 {
                scatter(&k, y, h, v, |yy, a| *out.get_mut(x, yy) += a);
            }
        }
    }
    Ok(out)
}

#[inline]
fn scatter(k: &[f64], i: usize, n: usize, v: f64, mut add: impl FnMut(usize, f64)) {
    let r = (k.len() / 2) as i64;
    let lo = (i as i64 - r).max(0);
    let hi = (i as i64 + r).min(n as i64 - 1);
    let norm: f64 = (lo..=hi).map(|j| k[(j - i as i64 + r) as usize]).sum();
    for j in lo..=hi {
        add(j as usize, v * k[(j - i as i64 + r) as usize] / norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(x: u16, y: u16, t: u64, pos: bool) -> Event {
        Event::new(x, y, t, if pos { Polarity::Positive } else { Polarity::Negative })
    }

    fn win() -> TimeWindow {
        TimeWindow::new(0, 10_000).unwrap()
    }

    #[test]
    fn zero_events_give_zero_rasters() {
        let s = build_time_surfaces(&[], win(), Region::new(0, 0, 16, 12), 2.0).unwrap();
        assert_eq!(s.t_pos.total(), 0);
        assert_eq!(s.t_neg.total(), 0);
        assert!(s.density.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(s.density.dims(), (16, 12));
    }

    #[test]
    fn tiny_sigma_is_identity_kernel() {
        let s = build_time_surfaces(&[ev(5, 5, 1, true)], win(), Region::new(0, 0, 10, 10), 1e-3).unwrap();
        assert_eq!(s.t_pos.get(5, 5), 1);
        assert_eq!(s.density.get(5, 5), 1.0);
        for y in 0..10 {
            for x in 0..10 {
                if (x, y) != (5, 5) {
                    assert_eq!(s.t_pos.get(x, y), 0);
                    assert_eq!(s.density.get(x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn mixed_events_at_one_pixel() {
        let events = [ev(3, 4, 1, true), ev(3, 4, 2, true), ev(3, 4, 3, false)];
        let s = build_time_surfaces(&events, win(), Region::new(0, 0, 8, 8), 2.0).unwrap();
        assert_eq!(s.t_pos.get(3, 4), 2);
        assert_eq!(s.t_neg.get(3, 4), 1);
        // direct count oracle: three events carry mass 3
        assert!((s.density.sum() - 3.0).abs() <= 3.0 * 1e-6);
    }

    #[test]
    fn errors_on_degenerate_region_and_unsorted_stream() {
        assert!(matches!(
            build_time_surfaces(&[], win(), Region::new(0, 0, 0, 5), 2.0),
            Err(EventError::DegenerateRegion)
        ));
        let events = [ev(0, 0, 5, true), ev(0, 0, 4, true)];
        let err = build_time_surfaces(&events, win(), Region::new(0, 0, 4, 4), 2.0).unwrap_err();
        assert!(err.to_string().contains("unordered stream"));
        assert!(build_time_surfaces(&[], win(), Region::new(0, 0, 4, 4), 0.0).is_err());
    }

    #[test]
    fn region_offset_and_window_filter() {
        let events = [ev(10, 10, 0, true), ev(12, 11, 5, false), ev(12, 11, 10_000, true)];
        let s = build_time_surfaces(&events, win(), Region::new(10, 10, 3, 3), 1.0).unwrap();
        assert_eq!(s.origin, (10, 10));
        assert_eq!(s.t_pos.get(0, 0), 1);
        assert_eq!(s.t_neg.get(2, 1), 1);
        // the t = 10 000 event is outside the half-open window
        assert_eq!(s.t_pos.total() + s.t_neg.total(), 2);
    }

    #[test]
    fn blur_preserves_mass_at_corner() {
        let mut r = Raster::<f64>::zeros(7, 5);
        r.set(0, 0, 4.0);
        r.set(6, 4, 1.5);
        let b = gaussian_blur(&r, 2.0).unwrap();
        assert!((b.sum() - 5.5).abs() < 1e-12);
        assert!(b.as_slice().iter().all(|&v| v >= 0.0));
        // mass spreads
        assert!(b.get(1, 0) > 0.0);
    }
}
