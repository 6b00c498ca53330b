pub mod camera;
pub mod config;
pub mod detect;
pub mod events;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod se3;
pub mod sim;
pub mod tracker;
