use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::DatasetError;
use crate::geometry::{Intrinsics, PoseSE3, RelativeTransform};

/// Per-pixel metric z-depth, row-major. A value of `0.0` means "no measurement".
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, DatasetError> {
        if values.len() != width as usize * height as usize {
            return Err(DatasetError::InvalidData(format!(
                "depth map of {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(DatasetError::InvalidData(format!("depth value {bad} is not finite and nonnegative")));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: u32, height: u32, depth: f64) -> Result<Self, DatasetError> {
        Self::new(width, height, vec![depth; width as usize * height as usize])
    }

    /// Builds a map from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f64) -> Result<Self, DatasetError> {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.get(x, y) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.values.iter().map(|v| *v > 0.0).collect()
    }
}

/// 8-bit RGB image, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, DatasetError> {
        if data.len() != 3 * width as usize * height as usize {
            return Err(DatasetError::InvalidData(format!(
                "rgb image of {width}x{height} needs {} bytes, got {}",
                3 * width as usize * height as usize,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn black(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0; 3 * width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma `0.299 R + 0.587 G + 0.114 B` per pixel.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect()
    }
}

/// One timestamped RGBD record of an AR session.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub timestamp_us: i64,
    pub rgb: RgbImage,
    /// Named depth provenances, e.g. `"lidar"`, `"fm"`, `"gt"`.
    pub depth_sources: BTreeMap<String, DepthMap>,
    pub pose: PoseSE3,
}

impl Frame {
    pub fn depth(&self, source: &str) -> Result<&DepthMap, DatasetError> {
        self.depth_sources.get(source).ok_or_else(|| DatasetError::UnknownDepthSource {
            frame: self.index,
            source_name: source.to_string(),
        })
    }
}

pub const DEFAULT_FPS: f64 = 60.0;

/// An ordered recording sharing one set of intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    frames: Vec<Frame>,
    intrinsics: Intrinsics,
    nominal_fps: f64,
}

impl Session {
    pub fn new(frames: Vec<Frame>, intrinsics: Intrinsics, nominal_fps: f64) -> Result<Self, DatasetError> {
        if frames.is_empty() {
            return Err(DatasetError::EmptySession);
        }
        intrinsics.validate()?;
        if !(nominal_fps > 0.0 && nominal_fps.is_finite()) {
            return Err(DatasetError::InvalidData(format!("nominal fps {nominal_fps} must be positive")));
        }
        let (w, h) = (intrinsics.width, intrinsics.height);
        for (pos, frame) in frames.iter().enumerate() {
            if (frame.rgb.width(), frame.rgb.height()) != (w, h) {
                return Err(DatasetError::DimensionMismatch {
                    frame: frame.index,
                    what: "rgb".into(),
                    expected: (w, h),
                    actual: (frame.rgb.width(), frame.rgb.height()),
                });
            }
            for (name, depth) in &frame.depth_sources {
                if (depth.width(), depth.height()) != (w, h) {
                    return Err(DatasetError::DimensionMismatch {
                        frame: frame.index,
                        what: format!("depth source '{name}'"),
                        expected: (w, h),
                        actual: (depth.width(), depth.height()),
                    });
                }
            }
            if pos > 0 {
                let prev = &frames[pos - 1];
                if frame.timestamp_us <= prev.timestamp_us {
                    return Err(DatasetError::NonMonotonicTimestamps { frame: frame.index });
                }
                if frame.index <= prev.index {
                    return Err(DatasetError::InvalidData(format!(
                        "frame indices must strictly increase ({} follows {})",
                        frame.index, prev.index
                    )));
                }
            }
        }
        Ok(Self { frames, intrinsics, nominal_fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, pos: usize) -> &Frame {
        &self.frames[pos]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false for a constructed session; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn nominal_fps(&self) -> f64 {
        self.nominal_fps
    }

    /// Names of depth sources present in every frame, sorted.
    pub fn common_depth_sources(&self) -> Vec<String> {
        let first = &self.frames[0];
        first
            .depth_sources
            .keys()
            .filter(|name| self.frames.iter().all(|f| f.depth_sources.contains_key(*name)))
            .cloned()
            .collect()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn expanded(&self, margin: f64) -> Aabb {
        let m = Vector3::repeat(margin);
        Aabb { min: self.min - m, max: self.max + m }
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let min = self.min.sup(&other.min);
        let max = self.max.inf(&other.max);
        (min.x <= max.x && min.y <= max.y && min.z <= max.z).then_some(Aabb { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// World-frame point set with optional per-point colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, colors: Option<Vec<[u8; 3]>>) -> Result<Self, DatasetError> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(DatasetError::InvalidData("point cloud contains non-finite coordinates".into()));
        }
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(DatasetError::InvalidData(format!(
                    "{} colors for {} points",
                    c.len(),
                    points.len()
                )));
            }
        }
        Ok(Self { points, colors })
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self { points, colors: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let first = self.points.first()?;
        let (min, max) = self
            .points
            .iter()
            .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Aabb { min, max })
    }

    pub fn transformed(&self, t: &RelativeTransform) -> PointCloud {
        PointCloud { points: self.points.iter().map(|p| t.apply(p)).collect(), colors: self.colors.clone() }
    }

    /// Keeps the points for which `keep` returns true, with their colors.
    pub fn filtered(&self, keep: impl Fn(&Vector3<f64>) -> bool) -> PointCloud {
        let mut points = Vec::new();
        let mut colors = self.colors.as_ref().map(|_| Vec::new());
        for (i, p) in self.points.iter().enumerate() {
            if keep(p) {
                points.push(*p);
                if let (Some(out), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        PointCloud { points, colors }
    }
}

/// Triangle mesh over a vertex cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurfaceMesh {
    pub vertices: PointCloud,
    pub triangles: Vec<[u32; 3]>,
}

impl SurfaceMesh {
    pub fn new(vertices: PointCloud, triangles: Vec<[u32; 3]>) -> Result<Self, DatasetError> {
        let n = vertices.len();
        for t in &triangles {
            if t.iter().any(|&i| i as usize >= n) {
                return Err(DatasetError::InvalidData(format!("triangle {t:?} references a vertex beyond {n}")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(DatasetError::InvalidData(format!("degenerate triangle {t:?}")));
            }
        }
        Ok(Self { vertices, triangles })
    }
}
