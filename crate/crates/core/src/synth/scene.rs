use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::dataset::{DepthMap, RgbImage};
use crate::geometry::{Intrinsics, PoseSE3};

/// Procedural wall texture: a two-color checker plus band-limited value noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallTexture {
    pub checker_m: f64,
    pub color_a: [u8; 3],
    pub color_b: [u8; 3],
    /// Peak noise offset in intensity levels.
    pub noise_amplitude: f64,
    /// Noise lattice spacing, meters.
    pub noise_cell_m: f64,
    /// Half width of the linear ramp between checker cells, meters.
    pub edge_ramp_m: f64,
}

impl WallTexture {
    pub fn new(color_a: [u8; 3], color_b: [u8; 3]) -> Self {
        Self { checker_m: 0.25, color_a, color_b, noise_amplitude: 45.0, noise_cell_m: 0.06, edge_ramp_m: 0.02 }
    }
}

/// Faces in order `-x, +x, -y, +y, -z (floor), +z (ceiling)`.
pub const FACE_NAMES: [&str; 6] = ["-x", "+x", "-y", "+y", "floor", "ceiling"];

/// Axis-aligned box room centered at the origin of its own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxScene {
    pub extents: Vector3<f64>,
    pub walls: [WallTexture; 6],
    /// Scene-to-world placement of the room.
    pub pose: PoseSE3,
}

impl Default for BoxScene {
    fn default() -> Self {
        Self {
            extents: Vector3::new(4.0, 3.0, 2.5),
            walls: [
                WallTexture::new([200, 60, 50], [40, 30, 110]),
                WallTexture::new([230, 200, 60], [30, 90, 40]),
                WallTexture::new([240, 240, 230], [60, 60, 70]),
                WallTexture::new([90, 170, 220], [120, 40, 20]),
                WallTexture::new([150, 110, 70], [40, 25, 15]),
                WallTexture::new([210, 210, 240], [100, 120, 100]),
            ],
            pose: PoseSE3::identity(),
        }
    }
}

/// One ray hit in scene coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: usize,
    pub point: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    pub depth: DepthMap,
}

fn mix(mut v: u64) -> u64 {
    v = v.wrapping_add(0x9E37_79B9_7F4A_7C15);
    v = (v ^ (v >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    v = (v ^ (v >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    v ^ (v >> 31)
}

fn lattice(face: usize, ix: i64, iy: i64) -> f64 {
    let h = mix(mix(mix(face as u64) ^ ix as u64) ^ iy as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(face: usize, s: f64, t: f64) -> f64 {
    let (fs, ft) = (s.floor(), t.floor());
    let (ds, dt) = (s - fs, t - ft);
    let (ix, iy) = (fs as i64, ft as i64);
    let top = lattice(face, ix, iy) * (1.0 - ds) + lattice(face, ix + 1, iy) * ds;
    let bottom = lattice(face, ix, iy + 1) * (1.0 - ds) + lattice(face, ix + 1, iy + 1) * ds;
    top * (1.0 - dt) + bottom * dt
}

/// `+1` on even cells, `-1` on odd cells, ramping linearly within `ramp` of each cell boundary.
fn square_wave(s: f64, period: f64, ramp: f64) -> f64 {
    let q = s / period;
    let cell = q.floor();
    let sign = if (cell as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    if ramp == 0.0 {
        return sign;
    }
    let frac = q - cell;
    let edge = frac.min(1.0 - frac) * period;
    sign * (edge / ramp).min(1.0)
}

impl BoxScene {
    pub fn half_extents(&self) -> Vector3<f64> {
        self.extents / 2.0
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.extents.iter().all(|e| *e > 0.0 && e.is_finite())
            && self.walls.iter().all(|w| w.checker_m > 0.0 && w.noise_cell_m > 0.0 && w.noise_amplitude >= 0.0 && w.edge_ramp_m >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec("scene extents and texture scales must be positive".into()))
        }
    }

    /// World point expressed in the room frame.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse_transform_point(p)
    }

    /// Whether a world point is strictly inside the room.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let q = self.to_local(p);
        let h = self.half_extents();
        (0..3).all(|i| q[i].abs() < h[i])
    }

    /// Signed distance of a world point to the room surface (negative inside).
    pub fn sdf(&self, p: &Vector3<f64>) -> f64 {
        let q = self.to_local(p);
        let h = self.half_extents();
        (0..3).map(|i| q[i].abs() - h[i]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// First wall hit by the ray `origin + t * dir` (room frame, origin inside).
    pub fn intersect_local(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Hit {
        let h = self.half_extents();
        let mut best = Hit { t: f64::INFINITY, face: 0, point: *origin };
        for axis in 0..3 {
            let d = dir[axis];
            if d == 0.0 {
                continue;
            }
            let (plane, face) = if d > 0.0 { (h[axis], 2 * axis + 1) } else { (-h[axis], 2 * axis) };
            let t = (plane - origin[axis]) / d;
            if t < best.t {
                best = Hit { t, face, point: origin + dir * t };
                best.point[axis] = plane;
            }
        }
        best
    }

    /// In-plane texture coordinates of a room-frame point on `face`.
    pub fn face_coords(face: usize, p: &Vector3<f64>) -> (f64, f64) {
        match face / 2 {
            0 => (p.y, p.z),
            1 => (p.x, p.z),
            _ => (p.x, p.y),
        }
    }

    pub fn texture(&self, face: usize, p: &Vector3<f64>) -> [f64; 3] {
        let w = &self.walls[face];
        let (s, t) = Self::face_coords(face, p);
        let mix = 0.5 + 0.5 * square_wave(s, w.checker_m, w.edge_ramp_m) * square_wave(t, w.checker_m, w.edge_ramp_m);
        let n = w.noise_amplitude * value_noise(face, s / w.noise_cell_m, t / w.noise_cell_m);
        let c = |ch: usize| f64::from(w.color_b[ch]) + (f64::from(w.color_a[ch]) - f64::from(w.color_b[ch])) * mix + n;
        [c(0), c(1), c(2)]
    }
}

/// Supersampling grid per pixel axis for color.
const SUPERSAMPLE: u32 = 3;

/// Ray-casts the room from `pose`; depth is z-depth along the pixel-center ray.
pub fn render_frame(scene: &BoxScene, pose: &PoseSE3, k: &Intrinsics) -> Result<RenderedView, SynthError> {
    scene.validate()?;
    k.validate()?;
    if !scene.contains(pose.translation()) {
        return Err(SynthError::CameraOutside { position: *pose.translation() });
    }
    let local = scene.pose.inverse().compose(pose);
    let origin = *local.translation();
    let rot = *local.rotation();
    let (w, h) = (k.width as usize, k.height as usize);
    let ray = |u: f64, v: f64| rot * Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);

    let rows: Vec<(Vec<u8>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rgb = Vec::with_capacity(3 * w);
            let mut depth = Vec::with_capacity(w);
            for x in 0..w {
                let (u, v) = (x as f64, y as f64);
                depth.push(scene.intersect_local(&origin, &ray(u, v)).t);
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let du = (f64::from(sx) + 0.5) / f64::from(SUPERSAMPLE) - 0.5;
                        let dv = (f64::from(sy) + 0.5) / f64::from(SUPERSAMPLE) - 0.5;
                        let hit = scene.intersect_local(&origin, &ray(u + du, v + dv));
                        let c = scene.texture(hit.face, &hit.point);
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                    }
                }
                let n = f64::from(SUPERSAMPLE * SUPERSAMPLE);
                rgb.extend(acc.iter().map(|c| (c / n).round().clamp(0.0, 255.0) as u8));
            }
            (rgb, depth)
        })
        .collect();
    let (mut rgb, mut depth) = (Vec::with_capacity(3 * w * h), Vec::with_capacity(w * h));
    for (r, d) in rows {
        rgb.extend(r);
        depth.extend(d);
    }
    Ok(RenderedView { rgb: RgbImage::new(k.width, k.height, rgb)?, depth: DepthMap::new(k.width, k.height, depth)? })
}
