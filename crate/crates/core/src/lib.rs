//! Geometry-aware RGBD frame warping, sparse-frame reconstruction and frame-selection policies.

pub mod dataset;
pub mod geometry;
pub mod metrics;
pub mod warp;
pub mod recon;
pub mod synth;
pub mod policies;
