//! Density-guided keypoint tracking across successive time-surface windows.
//!
//! Each keypoint carries a constant-velocity filter. Per window the filter
//! predicts, the local surface around the prediction is classified by
//! polarity balance, a match is searched for with the mixed or the
//! single-polarity strategy, and the filter is corrected with it. The
//! reported position is blended with the previous one and kept only if it
//! stays inside the search window.

mod ekf;
mod matching;

pub use ekf::{ekf_predict, ekf_update, repair_covariance, ConstantVelocity, EkfState, MotionModel, COVARIANCE_FLOOR};
pub use matching::{classify_polarity, match_mixed, match_single, mixed_score, patch_center, Match};

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{build_time_surfaces, Event, EventError, Polarity, Region, TimeSurfacePair, TimeWindow};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("invalid tracker parameter: {0}")]
    InvalidParam(String),
    #[error("{states} keypoint states but {surfaces} surfaces")]
    Misaligned { states: usize, surfaces: usize },
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityClass {
    SinglePositive,
    SingleNegative,
    Mixed,
    Insufficient,
}

impl PolarityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PolarityClass::SinglePositive => "single_positive",
            PolarityClass::SingleNegative => "single_negative",
            PolarityClass::Mixed => "mixed",
            PolarityClass::Insufficient => "insufficient",
        }
    }
}

/// Where the negative count is read for a mixed-score candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// Candidate reflected through the patch centre.
    #[default]
    Mirrored,
    /// Same cell as the positive count.
    Colocated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Polarity-ratio threshold, in (0.5, 1].
    pub eta: f64,
    /// Density weight in the mixed score.
    pub beta: f64,
    /// Weight of the previous output position in the blend.
    pub alpha: f64,
    /// Half-width of the square search region (px).
    pub search_radius: usize,
    /// Side of the integration window (px, odd).
    pub big_window: usize,
    /// Side of the local-maximum window (px, odd).
    pub small_window: usize,
    /// Velocity-block process variance (px²).
    pub process_noise: f64,
    /// Measurement variance (px²).
    pub measurement_noise: f64,
    /// Fewer local events than this classifies as insufficient.
    pub min_events: u64,
    /// Consecutive misses tolerated before a keypoint is dead.
    pub max_lost: u32,
    /// Density blur of local surfaces (px).
    pub blur_sigma: f64,
    pub negative_sampling: NegativeSampling,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            eta: 0.8,
            beta: 0.5,
            alpha: 0.3,
            search_radius: 12,
            big_window: 7,
            small_window: 3,
            process_noise: 0.01,
            measurement_noise: 1.0,
            min_events: 6,
            max_lost: 5,
            blur_sigma: 2.0,
            negative_sampling: NegativeSampling::Mirrored,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |msg: String| Err(TrackerError::InvalidParam(msg));
        if !(self.eta > 0.5 && self.eta <= 1.0) {
            return bad(format!("eta = {} outside (0.5, 1]", self.eta));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta = {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha = {} outside [0, 1]", self.alpha));
        }
        if self.search_radius == 0 {
            return bad("search_radius = 0".into());
        }
        if self.small_window.is_multiple_of(2) || self.big_window.is_multiple_of(2) {
            return bad("window sides must be odd".into());
        }
        if !(self.small_window <= self.big_window && self.big_window <= 2 * self.search_radius + 1) {
            return bad(format!(
                "need small_window {} <= big_window {} <= 2*search_radius+1 = {}",
                self.small_window,
                self.big_window,
                2 * self.search_radius + 1
            ));
        }
        if !(self.process_noise.is_finite() && self.process_noise >= 0.0) {
            return bad(format!("process_noise = {}", self.process_noise));
        }
        if !(self.measurement_noise.is_finite() && self.measurement_noise > 0.0) {
            return bad(format!("measurement_noise = {}", self.measurement_noise));
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma > 0.0) {
            return bad(format!("blur_sigma = {}", self.blur_sigma));
        }
        Ok(())
    }

    pub fn motion_model(&self) -> ConstantVelocity {
        ConstantVelocity {
            q: self.process_noise,
            r: self.measurement_noise,
        }
    }

    /// Radius of the local surface needed to evaluate every search candidate.
    pub fn surface_radius(&self) -> usize {
        self.search_radius + self.big_window / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub t_us: u64,
    pub position: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointState {
    /// Semantic correspondence id.
    pub index: usize,
    pub filter: EkfState,
    /// Last reported position.
    pub position: Vector2<f64>,
    pub trajectory: Vec<TrackPoint>,
    pub alive: bool,
    /// Whether the last step produced a match.
    pub valid: bool,
    pub lost_steps: u32,
}

/// Initial velocity variance ((px/window)²).
const INITIAL_VELOCITY_VARIANCE: f64 = 1.0;

impl KeypointState {
    /// `velocity` is in pixels per window.
    pub fn new(index: usize, position: Vector2<f64>, velocity: Vector2<f64>, params: &TrackerParams) -> Self {
        let r = params.measurement_noise;
        let cov = Matrix4::from_diagonal(&Vector4::new(
            r,
            r,
            INITIAL_VELOCITY_VARIANCE,
            INITIAL_VELOCITY_VARIANCE,
        ));
        Self {
            index,
            filter: EkfState::new(Vector4::new(position.x, position.y, velocity.x, velocity.y), cov),
            position,
            trajectory: Vec::new(),
            alive: true,
            valid: true,
            lost_steps: 0,
        }
    }

    /// Where the next window's search will be centred.
    pub fn predicted_center(&self, params: &TrackerParams) -> (i64, i64) {
        let p = ekf_predict(&self.filter, &params.motion_model()).position();
        (p.x.round() as i64, p.y.round() as i64)
    }

    pub fn local_region(&self, params: &TrackerParams) -> Region {
        let (cx, cy) = self.predicted_center(params);
        Region::centered(cx, cy, params.surface_radius())
    }
}

/// Local surfaces for every alive keypoint, centred on its prediction.
pub fn build_local_surfaces(
    events: &[Event],
    window: TimeWindow,
    states: &[KeypointState],
    params: &TrackerParams,
) -> Result<Vec<Option<TimeSurfacePair>>, TrackerError> {
    let events = crate::events::events_in_window(events, window);
    states
        .iter()
        .map(|s| {
            if !s.alive {
                return Ok(None);
            }
            Ok(Some(build_time_surfaces(
                events,
                window,
                s.local_region(params),
                params.blur_sigma,
            )?))
        })
        .collect()
}

/// One line of the track log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub t_us: u64,
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
    pub score: f64,
    pub class: Option<PolarityClass>,
}

/// Advances every keypoint by one window.
///
/// `surfaces[i]` belongs to `states[i]` and is expected to be centred on that
/// keypoint's prediction. `sensor` is `(width, height)`. Records are
/// timestamped with the window midpoint.
pub fn track_step(
    states: &mut [KeypointState],
    surfaces: &[Option<TimeSurfacePair>],
    params: &TrackerParams,
    sensor: (u32, u32),
) -> Result<Vec<TrackRecord>, TrackerError> {
    if states.len() != surfaces.len() {
        return Err(TrackerError::Misaligned {
            states: states.len(),
            surfaces: surfaces.len(),
        });
    }
    let model = params.motion_model();
    let mut records = Vec::with_capacity(states.len());
    for (state, surface) in states.iter_mut().zip(surfaces) {
        let (t_us, matched, class) = match (state.alive, surface) {
            (true, Some(s)) => {
                let (m, class) = step_one(state, s, params, &model, sensor);
                (s.window.midpoint_us(), m, Some(class))
            }
            _ => (surface.as_ref().map_or(0, |s| s.window.midpoint_us()), None, None),
        };
        if matched.is_some() {
            state.valid = true;
            state.lost_steps = 0;
        } else {
            state.valid = false;
            if state.alive {
                state.lost_steps += 1;
                if state.lost_steps > params.max_lost {
                    state.alive = false;
                }
            }
        }
        if state.valid {
            state.trajectory.push(TrackPoint {
                t_us,
                position: state.position,
            });
        }
        records.push(TrackRecord {
            t_us,
            index: state.index,
            x: state.position.x,
            y: state.position.y,
            valid: state.valid,
            score: matched.map_or(0.0, |m| m.score),
            class,
        });
    }
    Ok(records)
}

fn step_one(
    state: &mut KeypointState,
    surface: &TimeSurfacePair,
    params: &TrackerParams,
    model: &ConstantVelocity,
    sensor: (u32, u32),
) -> (Option<Match>, PolarityClass) {
    let predicted = ekf_predict(&state.filter, model);
    let class = classify_polarity(surface, params.eta, params.min_events);
    let found = match class {
        PolarityClass::SinglePositive => match_single(surface, Polarity::Positive, params),
        PolarityClass::SingleNegative => match_single(surface, Polarity::Negative, params),
        PolarityClass::Mixed => match_mixed(surface, params),
        PolarityClass::Insufficient => None,
    };
    state.filter = match found {
        Some(m) => ekf_update(&predicted, &Vector2::new(m.x as f64, m.y as f64), model),
        None => predicted,
    };
    let blended = state.position * params.alpha + state.filter.position() * (1.0 - params.alpha);
    let (cx, cy) = patch_center(surface);
    let center = (cx as i64 + surface.origin.0, cy as i64 + surface.origin.1);
    let r = params.search_radius as f64;
    let in_window = (blended.x - center.0 as f64).abs() <= r && (blended.y - center.1 as f64).abs() <= r;
    let in_sensor = blended.x >= 0.0
        && blended.y >= 0.0
        && blended.x <= (sensor.0 - 1) as f64
        && blended.y <= (sensor.1 - 1) as f64;
    if in_window && in_sensor {
        state.position = blended;
    }
    (found, class)
}

pub fn write_track_log<W: Write>(records: &[TrackRecord], w: W) -> Result<(), TrackerError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_us", "keypoint_index", "x", "y", "valid", "score", "class"])
        .map_err(csv_err)?;
    for r in records {
        out.write_record([
            r.t_us.to_string(),
            r.index.to_string(),
            format!("{:.6}", r.x),
            format!("{:.6}", r.y),
            u8::from(r.valid).to_string(),
            format!("{:.6}", r.score),
            r.class.map_or("none", PolarityClass::as_str).to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_track_log(path: &Path, records: &[TrackRecord]) -> Result<(), TrackerError> {
    write_track_log(records, std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn csv_err(e: csv::Error) -> TrackerError {
    TrackerError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;

    fn blob_surface(center: (i64, i64), blob: (i64, i64), params: &TrackerParams) -> TimeSurfacePair {
        let r = params.surface_radius();
        let n = 2 * r + 1;
        let origin = (center.0 - r as i64, center.1 - r as i64);
        let pos = Raster::from_fn(n, n, |x, y| {
            let dx = x as i64 + origin.0 - blob.0;
            let dy = y as i64 + origin.1 - blob.1;
            (6 - 2 * (dx.abs() + dy.abs())).max(0) as u32
        });
        TimeSurfacePair::from_counts(
            pos,
            Raster::zeros(n, n),
            TimeWindow::new(0, 10_000).unwrap(),
            origin,
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn defaults_are_valid_and_invariant_checked() {
        TrackerParams::default().validate().unwrap();
        let p = TrackerParams {
            big_window: 27,
            ..TrackerParams::default()
        };
        assert!(p.validate().is_err());
        let p = TrackerParams {
            eta: 0.5,
            ..TrackerParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn alpha_one_keeps_previous_position() {
        let params = TrackerParams {
            alpha: 1.0,
            ..TrackerParams::default()
        };
        let mut states = vec![KeypointState::new(
            0,
            Vector2::new(50.0, 40.0),
            Vector2::zeros(),
            &params,
        )];
        let s = blob_surface((50, 40), (55, 43), &params);
        track_step(&mut states, &[Some(s)], &params, (200, 200)).unwrap();
        assert_eq!(states[0].position, Vector2::new(50.0, 40.0));
        assert!(states[0].valid);
    }

    #[test]
    fn alpha_zero_follows_filter() {
        let params = TrackerParams {
            alpha: 0.0,
            measurement_noise: 1e-9,
            ..TrackerParams::default()
        };
        let mut states = vec![KeypointState::new(
            0,
            Vector2::new(50.0, 40.0),
            Vector2::zeros(),
            &params,
        )];
        let s = blob_surface((50, 40), (55, 43), &params);
        let rec = track_step(&mut states, &[Some(s)], &params, (200, 200)).unwrap();
        assert!((states[0].position - Vector2::new(55.0, 43.0)).norm() < 1e-6);
        assert_eq!(rec[0].class, Some(PolarityClass::SinglePositive));
    }

    #[test]
    fn missing_surface_isolated_and_dead_after_max_lost() {
        let params = TrackerParams::default();
        let mut states: Vec<_> = (0..4)
            .map(|i| KeypointState::new(i, Vector2::new(30.0 + 30.0 * i as f64, 40.0), Vector2::zeros(), &params))
            .collect();
        for step in 0..=params.max_lost {
            let surfaces: Vec<_> = states
                .iter()
                .map(|s| {
                    (s.index != 3).then(|| {
                        let c = (s.position.x.round() as i64, s.position.y.round() as i64);
                        blob_surface(c, c, &params)
                    })
                })
                .collect();
            let rec = track_step(&mut states, &surfaces, &params, (200, 200)).unwrap();
            assert!(!rec[3].valid);
            assert!(rec[..3].iter().all(|r| r.valid));
            assert_eq!(states[3].alive, step < params.max_lost);
        }
        assert!(states[..3].iter().all(|s| s.alive && s.lost_steps == 0));
    }

    #[test]
    fn log_format() {
        let rec = TrackRecord {
            t_us: 5000,
            index: 2,
            x: 1.5,
            y: 2.25,
            valid: true,
            score: 3.0,
            class: Some(PolarityClass::Mixed),
        };
        let mut buf = Vec::new();
        write_track_log(&[rec], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t_us,keypoint_index,x,y,valid,score,class\n5000,2,1.500000,2.250000,1,3.000000,mixed\n"
        );
    }
}
