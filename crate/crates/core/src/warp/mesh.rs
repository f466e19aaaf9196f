use nalgebra::Vector3;

use super::WarpError;
use crate::dataset::{DepthMap, RgbImage};
use crate::geometry::{Intrinsics, RelativeTransform};

/// Relative slack applied to the area threshold so that triangles equal up to rounding are kept.
const AREA_TOLERANCE: f64 = 1e-9;

/// Triangle mesh laid over the pixel grid of one depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenSpaceMesh {
    pub width: u32,
    pub height: u32,
    /// One position per pixel (row-major); zero where the depth is invalid.
    pub vertices: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
    pub valid: Vec<bool>,
    pub triangles: Vec<[u32; 3]>,
    /// 3D area of each kept triangle, m².
    pub areas: Vec<f64>,
    /// Number of candidate triangles before the area filter.
    pub candidate_count: usize,
    /// Area threshold applied, `None` when there were no candidates.
    pub area_threshold: Option<f64>,
}

impl ScreenSpaceMesh {
    pub fn valid_vertex_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn discarded_count(&self) -> usize {
        self.candidate_count - self.triangles.len()
    }

    /// Indices of all valid vertices in pixel order.
    pub fn valid_vertex_indices(&self) -> Vec<u32> {
        (0..self.valid.len() as u32).filter(|i| self.valid[*i as usize]).collect()
    }

    /// Copy with every valid vertex mapped through `t`.
    pub fn transformed(&self, t: &RelativeTransform) -> ScreenSpaceMesh {
        let mut out = self.clone();
        for (v, ok) in out.vertices.iter_mut().zip(&self.valid) {
            if *ok {
                *v = t.apply(v);
            }
        }
        out
    }
}

pub fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Nearest-rank percentile of `sorted` (ascending, non-empty).
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn build_screen_space_mesh(
    depth: &DepthMap,
    rgb: &RgbImage,
    k: &Intrinsics,
    area_percentile: f64,
) -> Result<ScreenSpaceMesh, WarpError> {
    if !(area_percentile > 0.0 && area_percentile <= 100.0) {
        return Err(WarpError::InvalidPercentile(area_percentile));
    }
    let (w, h) = (k.width, k.height);
    for (what, dims) in [("depth", (depth.width(), depth.height())), ("rgb", (rgb.width(), rgb.height()))] {
        if dims != (w, h) {
            return Err(WarpError::DimensionMismatch { what, expected: (w, h), actual: dims });
        }
    }
    let n = w as usize * h as usize;
    let mut vertices = vec![Vector3::zeros(); n];
    let mut valid = vec![false; n];
    let mut colors = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let i = y as usize * w as usize + x as usize;
            let d = depth.values()[i];
            if d > 0.0 {
                vertices[i] = Vector3::new(d * (f64::from(x) - k.cx) / k.fx, d * (f64::from(y) - k.cy) / k.fy, d);
                valid[i] = true;
            }
            colors.push(rgb.get(x, y));
        }
    }

    let mut candidates = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let a = y * w + x;
            let (b, c, d) = (a + 1, a + w, a + w + 1);
            if [a, b, c, d].iter().all(|i| valid[*i as usize]) {
                candidates.push([a, b, d]);
                candidates.push([a, d, c]);
            }
        }
    }
    let areas: Vec<f64> = candidates
        .iter()
        .map(|t| triangle_area(&vertices[t[0] as usize], &vertices[t[1] as usize], &vertices[t[2] as usize]))
        .collect();

    let candidate_count = candidates.len();
    let area_threshold = if areas.is_empty() {
        None
    } else {
        let mut sorted = areas.clone();
        sorted.sort_by(f64::total_cmp);
        Some(nearest_rank(&sorted, area_percentile))
    };
    let (triangles, kept_areas) = match area_threshold {
        Some(limit) => {
            let limit = limit * (1.0 + AREA_TOLERANCE);
            candidates.into_iter().zip(areas).filter(|(_, a)| *a <= limit).unzip()
        }
        None => (Vec::new(), Vec::new()),
    };

    Ok(ScreenSpaceMesh {
        width: w,
        height: h,
        vertices,
        colors,
        valid,
        triangles,
        areas: kept_areas,
        candidate_count,
        area_threshold,
    })
}
