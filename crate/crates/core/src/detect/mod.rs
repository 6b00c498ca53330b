//! Keypoint initialization on time surfaces.
//!
//! Any producer of an ordered [`KeypointSet`] can act as a detector. Two are
//! provided: a density-peak detector working directly on the blurred event
//! density, and an oracle that projects the known model under a given pose.
//! Heatmaps from an external network can be exchanged through `HMP1` files
//! and reduced with [`extract_peaks`].

mod heatmap_io;
mod loss;
mod peaks;

pub use heatmap_io::{decode_heatmap, encode_heatmap, read_heatmap, write_heatmap, HEATMAP_MAGIC};
pub use loss::{
    loss_coord, loss_coord_grad, loss_heatmap, loss_heatmap_grad, loss_sakhl, loss_structure, pairwise_distances,
    KeypointBatch, LossWeights,
};
pub use peaks::{detect_density_peaks, extract_peaks, slice_patch, stitch_patch, DensityPeakParams, Patch};

use nalgebra::Vector2;
use thiserror::Error;

use crate::camera::CameraIntrinsics;
use crate::events::TimeSurfacePair;
use crate::raster::Raster;
use crate::se3::PoseSE3;
use crate::sim::{project_keypoints, SceneModel};

/// Default validity floor for heatmap peaks.
pub const DEFAULT_PEAK_FLOOR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("heatmap values must be finite")]
    NonFinite,
    #[error("heatmap needs at least one channel")]
    NoChannels,
    #[error("patch radius must be >= 1")]
    InvalidRadius,
    #[error("loss weights must be non-negative with at least one positive")]
    InvalidWeights,
    #[error("malformed heatmap file at byte offset {offset}: {msg}")]
    Malformed { offset: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `K` channels of `H × W` response maps, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    channels: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self, DetectError> {
        if channels == 0 {
            return Err(DetectError::NoChannels);
        }
        if data.len() != channels * width * height {
            return Err(DetectError::ShapeMismatch(format!(
                "{} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DetectError::NonFinite);
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn from_channels(channels: &[Raster<f64>]) -> Result<Self, DetectError> {
        let first = channels.first().ok_or(DetectError::NoChannels)?;
        let (w, h) = first.dims();
        if channels.iter().any(|c| c.dims() != (w, h)) {
            return Err(DetectError::ShapeMismatch("channel dimensions differ".into()));
        }
        let data = channels.iter().flat_map(|c| c.as_slice().iter().copied()).collect();
        Self::new(channels.len(), w, h, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(K, H, W)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn channel_raster(&self, k: usize) -> Raster<f64> {
        Raster::from_vec(self.width, self.height, self.channel(k).to_vec()).expect("channel size")
    }

    pub fn get(&self, k: usize, x: usize, y: usize) -> f64 {
        self.data[(k * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, k: usize, x: usize, y: usize, v: f64) {
        self.data[(k * self.height + y) * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Column, sensor pixels.
    pub x: f64,
    /// Row, sensor pixels.
    pub y: f64,
    pub confidence: f64,
    pub valid: bool,
}

impl Keypoint {
    pub fn valid(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            x,
            y,
            confidence,
            valid: true,
        }
    }

    pub fn invalid() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            confidence: 0.0,
            valid: false,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Ordered keypoints; the order is the semantic correspondence index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeypointSet {
    pub points: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(points: Vec<Keypoint>) -> Self {
        Self { points }
    }

    pub fn from_positions(positions: &[(f64, f64)]) -> Self {
        Self::new(positions.iter().map(|&(x, y)| Keypoint::valid(x, y, 1.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.valid).count()
    }
}

/// Anything that turns a time surface into keypoints.
pub trait KeypointDetector {
    fn detect(&self, surfaces: &TimeSurfacePair) -> KeypointSet;
}

/// Greedy density-map maxima; order is arbitrary until correspondence assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityPeakDetector {
    pub params: DensityPeakParams,
}

impl KeypointDetector for DensityPeakDetector {
    fn detect(&self, surfaces: &TimeSurfacePair) -> KeypointSet {
        detect_density_peaks(surfaces, &self.params)
    }
}

/// Projects the known model under a known pose; ordering follows the model.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    pub model: SceneModel,
    pub pose: PoseSE3,
    pub camera: CameraIntrinsics,
}

impl KeypointDetector for OracleDetector {
    fn detect(&self, _surfaces: &TimeSurfacePair) -> KeypointSet {
        KeypointSet::new(
            project_keypoints(&self.model, &self.pose, &self.camera)
                .into_iter()
                .map(|p| {
                    if p.visible {
                        Keypoint::valid(p.uv.x, p.uv.y, 1.0)
                    } else {
                        Keypoint::invalid()
                    }
                })
                .collect(),
        )
    }
}
