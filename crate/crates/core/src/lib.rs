//! Fixed-threshold robustness evaluation for AI-generated image detectors.
//!
//! Decision thresholds are chosen once on clean validation scores and then
//! held fixed while test images pass through a grid of post-processing
//! degradations (JPEG, Gaussian blur, downscaling). The crate also ships a
//! small gated CNN/attention detector and a synthetic dataset generator with
//! separable high-frequency and layout cues, so the whole pipeline runs on a
//! laptop CPU.

pub mod dataset;
pub mod detector;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod protocol;
pub mod scores;
pub mod stats;
pub mod synthgen;
pub mod transforms;

pub use error::{Error, Result};
