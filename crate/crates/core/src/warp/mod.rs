//! Geometry-aware warping of RGBD frames between camera poses.
//!
//! The source depth map is meshed over its pixel grid, the mesh is moved into the target camera
//! and rasterized with a z-buffer. Pixels that no triangle reaches but onto which a valid source
//! vertex projects receive that vertex (nearest one wins); everything else stays invalid.

mod mesh;
mod raster;

use thiserror::Error;

use crate::dataset::{DatasetError, DepthMap, Frame, RgbImage};
use crate::geometry::{relative_transform, Intrinsics, PoseSE3};

pub use mesh::{build_screen_space_mesh, nearest_rank, triangle_area, ScreenSpaceMesh};
pub use raster::{rasterize, rasterize_with_vertex_fallback, Framebuffer, MeshView, Z_NEAR};

pub const DEFAULT_AREA_PERCENTILE: f64 = 95.0;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("area percentile must be in (0, 100], got {0}")]
    InvalidPercentile(f64),
    #[error("{what} is {actual:?}, intrinsics expect {expected:?}")]
    DimensionMismatch { what: &'static str, expected: (u32, u32), actual: (u32, u32) },
}

/// Target-view output of a warp.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub valid_mask: Vec<bool>,
    /// Valid target pixels over all target pixels.
    pub overlap_ratio: f64,
    /// Valid-depth pixels in the source frame.
    pub source_valid_count: usize,
}

impl WarpResult {
    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }

    fn from_framebuffer(fb: Framebuffer, source_valid_count: usize) -> Self {
        let total = fb.valid.len();
        let count = fb.valid_count();
        WarpResult {
            rgb: fb.rgb,
            depth: fb.depth,
            valid_mask: fb.valid,
            overlap_ratio: if total == 0 { 0.0 } else { count as f64 / total as f64 },
            source_valid_count,
        }
    }
}

/// Warps `src` (colored by its rgb, shaped by `depth_source`) into the view at `dst_pose`.
pub fn warp_frame(
    src: &Frame,
    depth_source: &str,
    dst_pose: &PoseSE3,
    k: &Intrinsics,
    area_percentile: f64,
) -> Result<WarpResult, WarpError> {
    let depth = src.depth(depth_source)?;
    let mesh = build_screen_space_mesh(depth, &src.rgb, k, area_percentile)?;
    Ok(warp_mesh(&mesh, &src.pose, dst_pose, k))
}

/// Warps a prebuilt source mesh captured at `src_pose`.
pub fn warp_mesh(mesh: &ScreenSpaceMesh, src_pose: &PoseSE3, dst_pose: &PoseSE3, k: &Intrinsics) -> WarpResult {
    let moved = mesh.transformed(&relative_transform(src_pose, dst_pose));
    let view = MeshView { positions: &moved.vertices, colors: &moved.colors, triangles: &moved.triangles };
    let fallback = moved.valid_vertex_indices();
    let fb = rasterize_with_vertex_fallback(view, &fallback, k);
    WarpResult::from_framebuffer(fb, fallback.len())
}

/// Fraction of target pixels covered by the warp of `src` into `dst_pose`.
pub fn overlap_ratio(src: &Frame, depth_source: &str, dst_pose: &PoseSE3, k: &Intrinsics) -> Result<f64, WarpError> {
    Ok(warp_frame(src, depth_source, dst_pose, k, DEFAULT_AREA_PERCENTILE)?.overlap_ratio)
}

/// Rasterizes a target-frame mesh (triangles only) into a [`WarpResult`].
pub fn rasterize_result(view: MeshView<'_>, k: &Intrinsics) -> WarpResult {
    let source = view.positions.len();
    WarpResult::from_framebuffer(rasterize(view, k), source)
}
