//! Point-cloud feature learning toolkit.
//!
//! The pipeline samples local regions with farthest point sampling, groups
//! multi-scale neighborhoods with kNN, encodes each region's internal
//! structure with variable-size windowed convolution over its scale
//! features, mixes region features by Gaussian spatial similarity, and
//! pools a global descriptor for shape classification or per-point
//! segmentation. Everything trains end-to-end on a small built-in
//! reverse-mode autodiff engine.

pub mod autodiff;
pub mod config;
pub mod dataio;
pub mod geometry;
pub mod layers;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod training;

pub use scalar::Scalar;
