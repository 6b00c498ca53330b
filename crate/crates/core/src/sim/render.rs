//! Contrast-threshold event generation from a moving wireframe.
//!
//! Every micro-step the latent log-intensity field is re-evaluated on the
//! pixels near projected features. Each pixel keeps a reference level (the
//! last crossing); whenever the field moves a full threshold away from it an
//! event fires, timestamped by linear interpolation inside the micro-step,
//! and the reference advances to the crossing level.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::model::{segment_distance, SceneModel};
use super::{SimError, SimParams};
use crate::camera::CameraIntrinsics;
use crate::events::{ContrastModel, Event, EventStream, Polarity};
use crate::se3::{PoseSE3, TimedPose, Trajectory};

/// Profiles are truncated at this many σ.
const CUTOFF_SIGMAS: f64 = 5.0;
const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub events: EventStream,
    /// Ground truth sampled at every micro-step.
    pub truth: Trajectory,
}

/// Sparse-support accumulator over a dense sensor buffer.
struct Field {
    width: usize,
    height: usize,
    values: Vec<f64>,
    stamp: Vec<u32>,
    generation: u32,
    touched: Vec<u32>,
}

impl Field {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            stamp: vec![0; width * height],
            generation: 1,
            touched: Vec::new(),
        }
    }

    fn clear(&mut self) {
        for &i in &self.touched {
            self.values[i as usize] = 0.0;
        }
        self.touched.clear();
        self.generation = self.generation.wrapping_add(1).max(1);
    }

    #[inline]
    fn add(&mut self, x: usize, y: usize, v: f64) {
        let i = y * self.width + x;
        if self.stamp[i] != self.generation {
            self.stamp[i] = self.generation;
            self.touched.push(i as u32);
        }
        self.values[i] += v;
    }

    fn row_range(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let lo = lo.ceil().max(0.0);
        let hi = hi.floor().min(self.width as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    fn rows(&self, lo: f64, hi: f64) -> std::ops::RangeInclusive<usize> {
        let lo = lo.ceil().max(0.0);
        let hi = hi.floor().min(self.height as f64 - 1.0);
        if lo > hi {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        lo as usize..=hi as usize
    }

    fn splat_segment(&mut self, a: Vector2<f64>, b: Vector2<f64>, amp: f64, sigma: f64) {
        let c = CUTOFF_SIGMAS * sigma;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let ab = b - a;
        let len = ab.norm();
        let dir = if len > 0.0 { ab / len } else { Vector2::zeros() };
        let nrm = Vector2::new(-dir.y, dir.x);
        for y in self.rows(a.y.min(b.y) - c, a.y.max(b.y) + c) {
            let yf = y as f64;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for e in [a, b] {
                let dy = yf - e.y;
                if dy.abs() <= c {
                    let half = (c * c - dy * dy).sqrt();
                    lo = lo.min(e.x - half);
                    hi = hi.max(e.x + half);
                }
            }
            if len > 0.0 {
                // |n·(p−a)| ≤ c and 0 ≤ d·(p−a) ≤ len along this row
                let along = linear_interval(dir.x, dir.y * (yf - a.y) - dir.x * a.x, 0.0, len);
                let across = linear_interval(nrm.x, nrm.y * (yf - a.y) - nrm.x * a.x, -c, c);
                if let (Some(i1), Some(i2)) = (along, across) {
                    let l = i1.0.max(i2.0);
                    let h = i1.1.min(i2.1);
                    if l <= h {
                        lo = lo.min(l);
                        hi = hi.max(h);
                    }
                }
            }
            if let Some((x0, x1)) = self.row_range(lo, hi) {
                for x in x0..=x1 {
                    let d = segment_distance(Vector2::new(x as f64, yf), a, b);
                    if d <= c {
                        self.add(x, y, amp * (-d * d * inv).exp());
                    }
                }
            }
        }
    }

    fn splat_blob(&mut self, k: Vector2<f64>, amp: f64, sigma: f64) {
        let c = CUTOFF_SIGMAS * sigma;
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in self.rows(k.y - c, k.y + c) {
            let dy = y as f64 - k.y;
            let half = (c * c - dy * dy).max(0.0).sqrt();
            if let Some((x0, x1)) = self.row_range(k.x - half, k.x + half) {
                for x in x0..=x1 {
                    let dx = x as f64 - k.x;
                    let d2 = dx * dx + dy * dy;
                    if d2 <= c * c {
                        self.add(x, y, amp * (-d2 * inv).exp());
                    }
                }
            }
        }
    }
}

/// `{x : lo ≤ slope·x + offset ≤ hi}` as a closed interval (unbounded sides as ±∞).
fn linear_interval(slope: f64, offset: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if slope.abs() < 1e-12 {
        return (offset >= lo && offset <= hi).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let a = (lo - offset) / slope;
    let b = (hi - offset) / slope;
    Some((a.min(b), a.max(b)))
}

/// Projects keypoints, failing if any lies behind the camera.
fn project_checked(
    model: &SceneModel,
    pose: &PoseSE3,
    cam: &CameraIntrinsics,
    t_us: u64,
) -> Result<Vec<Vector2<f64>>, SimError> {
    model
        .keypoints()
        .iter()
        .map(|p| {
            let pc = pose.transform_point(p);
            if pc.z <= MIN_DEPTH {
                Err(SimError::LeavesFrustum { t_us })
            } else {
                Ok(cam.project(&pc))
            }
        })
        .collect()
}

fn splat_model(field: &mut Field, model: &SceneModel, projected: &[Vector2<f64>], sigma: f64) {
    if model.edge_contrast != 0.0 {
        for &(a, b) in model.edges() {
            field.splat_segment(projected[a], projected[b], model.edge_contrast, sigma);
        }
    }
    if model.keypoint_contrast != 0.0 {
        for &k in projected {
            field.splat_blob(k, model.keypoint_contrast, sigma);
        }
    }
}

/// Micro-step timestamps from the trajectory start to its end (inclusive).
pub fn micro_step_times(start_us: u64, end_us: u64, rate_hz: f64) -> Vec<u64> {
    let step = 1e6 / rate_hz;
    let mut times = Vec::new();
    let mut k = 0u64;
    loop {
        let t = start_us + (k as f64 * step).round() as u64;
        if t >= end_us {
            break;
        }
        if times.last() != Some(&t) {
            times.push(t);
        }
        k += 1;
    }
    times.push(end_us);
    times
}

/// Simulates the event stream produced by moving `model` along `traj`.
pub fn render_events(
    model: &SceneModel,
    traj: &Trajectory,
    cam: &CameraIntrinsics,
    contrast: ContrastModel,
    params: &SimParams,
) -> Result<SimOutput, SimError> {
    params.validate()?;
    let (start, end) = match (traj.start_us(), traj.end_us()) {
        (Some(s), Some(e)) => (s, e),
        _ => return Err(SimError::EmptyTrajectory),
    };
    let (w, h) = (cam.width as usize, cam.height as usize);
    let threshold = contrast.threshold();
    let sigma = params.profile_sigma_px;

    let times = micro_step_times(start, end, params.rate_hz);
    let mut truth = Vec::with_capacity(times.len());

    let mut current = Field::new(w, h);
    let mut next = Field::new(w, h);
    let mut reference = vec![0.0f64; w * h];
    let mut events: Vec<Event> = Vec::new();
    let mut step_events: Vec<Event> = Vec::new();

    let pose0 = traj.sample_at(times[0])?;
    let proj0 = project_checked(model, &pose0, cam, times[0])?;
    splat_model(&mut current, model, &proj0, sigma);
    for &i in &current.touched {
        reference[i as usize] = current.values[i as usize];
    }
    truth.push(TimedPose {
        t_us: times[0],
        pose: pose0,
    });

    for k in 1..times.len() {
        let (t0, t1) = (times[k - 1], times[k]);
        let pose = traj.sample_at(t1)?;
        truth.push(TimedPose { t_us: t1, pose });
        let proj = project_checked(model, &pose, cam, t1)?;
        next.clear();
        splat_model(&mut next, model, &proj, sigma);

        let dt = (t1 - t0) as f64;
        step_events.clear();
        let mut fire = |i: usize, l_old: f64, l_new: f64, reference: &mut f64| {
            if l_new == l_old {
                return;
            }
            let (x, y) = ((i % w) as u16, (i / w) as u16);
            let emit = |level: f64, p: Polarity, out: &mut Vec<Event>| {
                let frac = ((level - l_old) / (l_new - l_old)).clamp(0.0, 1.0);
                out.push(Event::new(x, y, t0 + (frac * dt).round() as u64, p));
            };
            while l_new - *reference >= threshold {
                *reference += threshold;
                emit(*reference, Polarity::Positive, &mut step_events);
            }
            while *reference - l_new >= threshold {
                *reference -= threshold;
                emit(*reference, Polarity::Negative, &mut step_events);
            }
        };
        // pixels covered now, then pixels only covered before (their field drops to 0)
        for &i in &next.touched {
            let i = i as usize;
            let old = if current.stamp[i] == current.generation {
                current.values[i]
            } else {
                0.0
            };
            fire(i, old, next.values[i], &mut reference[i]);
        }
        for &i in &current.touched {
            let i = i as usize;
            if next.stamp[i] != next.generation {
                fire(i, current.values[i], 0.0, &mut reference[i]);
            }
        }
        step_events.sort_unstable_by_key(|e| (e.t, e.y, e.x, e.p.sign()));
        events.extend_from_slice(&step_events);
        std::mem::swap(&mut current, &mut next);
    }

    if params.noise_rate_hz > 0.0 {
        add_noise(&mut events, w, h, start, end, params);
    }

    Ok(SimOutput {
        events: EventStream::new(cam.width as u16, cam.height as u16, events)?,
        truth: Trajectory::new(truth)?,
    })
}

fn add_noise(events: &mut Vec<Event>, w: usize, h: usize, start: u64, end: u64, params: &SimParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let duration_s = (end - start) as f64 * 1e-6;
    let lambda = params.noise_rate_hz * (w * h) as f64 * duration_s;
    if lambda <= 0.0 {
        return;
    }
    let n = Poisson::new(lambda).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
    for _ in 0..n {
        let x = rng.random_range(0..w) as u16;
        let y = rng.random_range(0..h) as u16;
        let t = rng.random_range(start..=end);
        let p = if rng.random_bool(0.5) {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        events.push(Event::new(x, y, t, p));
    }
    events.sort_unstable_by_key(|e| (e.t, e.y, e.x, e.p.sign()));
}
