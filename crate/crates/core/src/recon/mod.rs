//! Lifting frames to world-space point clouds and merging them into one reconstruction.

mod icp;
mod voxel;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Frame, PointCloud, Session};
use crate::geometry::{Intrinsics, RelativeTransform};

pub use icp::{icp_align, kabsch, IcpParams, IcpResult};
pub use voxel::{voxel_downsample, VoxelGrid};

pub const DEFAULT_VOXEL_SIZE_M: f64 = 0.02;
pub const DEFAULT_PIXEL_STRIDE: u32 = 1;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate registration at iteration {iteration}: {correspondences} correspondences")]
    Degenerate { iteration: usize, correspondences: usize },
    #[error("nothing to merge")]
    NoClouds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MergeMethod {
    Concat,
    Fused { voxel_size: f64 },
    FusedIcp { voxel_size: f64, icp: IcpParams },
}

impl MergeMethod {
    pub fn name(&self) -> &'static str {
        match self {
            MergeMethod::Concat => "concat",
            MergeMethod::Fused { .. } => "fused",
            MergeMethod::FusedIcp { .. } => "fused_icp",
        }
    }

    pub fn validate(&self) -> Result<(), ReconError> {
        match self {
            MergeMethod::Concat => Ok(()),
            MergeMethod::Fused { voxel_size } | MergeMethod::FusedIcp { voxel_size, .. }
                if !(*voxel_size > 0.0 && voxel_size.is_finite()) =>
            {
                Err(ReconError::InvalidParams(format!("voxel size {voxel_size}")))
            }
            MergeMethod::Fused { .. } => Ok(()),
            MergeMethod::FusedIcp { icp, .. } => icp.validate(),
        }
    }
}

/// Merged cloud plus the input positions that ICP could not register.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutput {
    pub cloud: PointCloud,
    pub skipped: Vec<usize>,
}

/// World-space points of every `stride`-th valid pixel (both axes), colored from the frame's rgb.
pub fn frame_to_pointcloud(frame: &Frame, depth_source: &str, k: &Intrinsics, stride: u32) -> Result<PointCloud, ReconError> {
    if stride == 0 {
        return Err(ReconError::InvalidParams("pixel stride must be at least 1".into()));
    }
    let depth = frame.depth(depth_source)?;
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for y in (0..depth.height()).step_by(stride as usize) {
        for x in (0..depth.width()).step_by(stride as usize) {
            let d = depth.get(x, y);
            if d > 0.0 {
                let cam = nalgebra::Vector3::new(d * (f64::from(x) - k.cx) / k.fx, d * (f64::from(y) - k.cy) / k.fy, d);
                points.push(frame.pose.transform_point(&cam));
                colors.push(frame.rgb.get(x, y));
            }
        }
    }
    Ok(PointCloud { points, colors: Some(colors) })
}

fn concat(clouds: &[PointCloud]) -> PointCloud {
    let colored = clouds.iter().all(|c| c.colors.is_some());
    let mut out = PointCloud { points: Vec::new(), colors: colored.then(Vec::new) };
    for c in clouds {
        out.points.extend_from_slice(&c.points);
        if let (Some(dst), Some(src)) = (out.colors.as_mut(), c.colors.as_ref()) {
            dst.extend_from_slice(src);
        }
    }
    out
}

fn fuse_parallel(clouds: &[PointCloud], voxel_size: f64) -> PointCloud {
    clouds
        .par_iter()
        .fold(
            || VoxelGrid::new(voxel_size),
            |mut g, c| {
                g.insert(c);
                g
            },
        )
        .reduce(|| VoxelGrid::new(voxel_size), VoxelGrid::merge)
        .to_cloud()
}

pub fn merge_clouds(clouds: &[PointCloud], method: &MergeMethod) -> Result<MergeOutput, ReconError> {
    method.validate()?;
    if clouds.is_empty() {
        return Err(ReconError::NoClouds);
    }
    match method {
        MergeMethod::Concat => Ok(MergeOutput { cloud: concat(clouds), skipped: Vec::new() }),
        MergeMethod::Fused { voxel_size } => Ok(MergeOutput { cloud: fuse_parallel(clouds, *voxel_size), skipped: Vec::new() }),
        MergeMethod::FusedIcp { voxel_size, icp } => {
            let mut grid = VoxelGrid::new(*voxel_size);
            grid.insert(&clouds[0]);
            let mut skipped = Vec::new();
            for (i, cloud) in clouds.iter().enumerate().skip(1) {
                if cloud.is_empty() {
                    continue;
                }
                let model = grid.to_cloud();
                match icp_align(&cloud.points, &model.points, &RelativeTransform::identity(), icp) {
                    Ok(r) => grid.insert(&cloud.transformed(&r.transform)),
                    Err(e @ ReconError::Degenerate { .. }) => {
                        warn!("cloud {i} skipped: {e}");
                        skipped.push(i);
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(MergeOutput { cloud: grid.to_cloud(), skipped })
        }
    }
}

/// Session positions `0, stride, 2 * stride, ...`.
pub fn strided_positions(len: usize, frame_stride: usize) -> Vec<usize> {
    (0..len).step_by(frame_stride.max(1)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub cloud: PointCloud,
    /// Session positions of the frames that were lifted.
    pub frames: Vec<usize>,
    /// Session positions rejected by ICP.
    pub skipped: Vec<usize>,
}

pub fn reconstruct_session(
    session: &Session,
    depth_source: &str,
    frame_stride: usize,
    method: &MergeMethod,
    pixel_stride: u32,
) -> Result<Reconstruction, ReconError> {
    if frame_stride == 0 {
        return Err(ReconError::InvalidParams("frame stride must be at least 1".into()));
    }
    method.validate()?;
    let frames = strided_positions(session.len(), frame_stride);
    let k = session.intrinsics();
    if let MergeMethod::Fused { voxel_size } = method {
        // streamed: each frame goes straight into a per-thread grid
        let grid = frames
            .par_iter()
            .try_fold(
                || VoxelGrid::new(*voxel_size),
                |mut g, &i| {
                    g.insert(&frame_to_pointcloud(session.frame(i), depth_source, k, pixel_stride)?);
                    Ok::<_, ReconError>(g)
                },
            )
            .try_reduce(|| VoxelGrid::new(*voxel_size), |a, b| Ok(a.merge(b)))?;
        return Ok(Reconstruction { cloud: grid.to_cloud(), frames, skipped: Vec::new() });
    }
    let clouds = frames
        .par_iter()
        .map(|&i| frame_to_pointcloud(session.frame(i), depth_source, k, pixel_stride))
        .collect::<Result<Vec<_>, _>>()?;
    let merged = merge_clouds(&clouds, method)?;
    let skipped = merged.skipped.iter().map(|i| frames[*i]).collect();
    Ok(Reconstruction { cloud: merged.cloud, frames, skipped })
}
