//! Image similarity (SSIM) and point-cloud distance (Hausdorff) metrics.

mod hausdorff;
mod kdtree;
mod ssim;

use thiserror::Error;

pub use hausdorff::{directed_hausdorff, hausdorff, HausdorffParams, HausdorffResult, DEFAULT_OVERLAP_MARGIN_M};
pub use kdtree::{squared_distance, KdTree};
pub use ssim::{ssim, ssim_depth, ssim_map, ssim_rgb, SsimParams, DEFAULT_DEPTH_RANGE_M};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("invalid metric parameters: {0}")]
    InvalidParams(String),
    #[error("point clouds do not overlap")]
    NoOverlap,
    #[error("point cloud is empty")]
    EmptyCloud,
}
