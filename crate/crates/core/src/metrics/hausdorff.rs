use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use super::MetricsError;
use crate::dataset::PointCloud;

pub const DEFAULT_OVERLAP_MARGIN_M: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HausdorffParams {
    pub overlap_margin: f64,
}

impl Default for HausdorffParams {
    fn default() -> Self {
        Self { overlap_margin: DEFAULT_OVERLAP_MARGIN_M }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HausdorffResult {
    pub distance: f64,
    pub directed_ab: f64,
    pub directed_ba: f64,
    /// Points of each cloud inside the overlap region.
    pub points_a: usize,
    pub points_b: usize,
}

/// Largest distance from any point of `from` to its nearest neighbour in `to`.
pub fn directed_hausdorff(from: &[Vector3<f64>], to: &KdTree) -> f64 {
    from.par_iter()
        .map(|p| to.nearest_squared(p).unwrap_or(f64::INFINITY))
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Symmetric Hausdorff distance restricted to the overlap of the two clouds' bounding boxes.
pub fn hausdorff(a: &PointCloud, b: &PointCloud, params: &HausdorffParams) -> Result<HausdorffResult, MetricsError> {
    if !(params.overlap_margin >= 0.0 && params.overlap_margin.is_finite()) {
        return Err(MetricsError::InvalidParams(format!("overlap margin {}", params.overlap_margin)));
    }
    let (ba, bb) = match (a.bounds(), b.bounds()) {
        (Some(ba), Some(bb)) => (ba, bb),
        _ => return Err(MetricsError::EmptyCloud),
    };
    let region = ba
        .expanded(params.overlap_margin)
        .intersection(&bb.expanded(params.overlap_margin))
        .ok_or(MetricsError::NoOverlap)?;
    let crop = |c: &PointCloud| c.points.iter().copied().filter(|p| region.contains(p)).collect::<Vec<_>>();
    let (pa, pb) = (crop(a), crop(b));
    if pa.is_empty() || pb.is_empty() {
        return Err(MetricsError::NoOverlap);
    }
    let (ta, tb) = (KdTree::new(&pa), KdTree::new(&pb));
    let directed_ab = directed_hausdorff(&pa, &tb);
    let directed_ba = directed_hausdorff(&pb, &ta);
    Ok(HausdorffResult {
        distance: directed_ab.max(directed_ba),
        directed_ab,
        directed_ba,
        points_a: pa.len(),
        points_b: pb.len(),
    })
}
