//! Analytic box-room renderer and trajectory generator for ground-truth sessions.

mod scene;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DepthMap, Frame, PointCloud, Session};
use crate::geometry::{GeometryError, Intrinsics, PoseSE3};

pub use scene::{render_frame, BoxScene, Hit, RenderedView, WallTexture, FACE_NAMES};

pub const GT_SOURCE: &str = "gt";
pub const NOISY_SOURCE: &str = "noisy";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("camera at {position:?} is not strictly inside the room")]
    CameraOutside { position: Vector3<f64> },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    /// Constant translation of `velocity` meters per frame along `direction` (world frame).
    Linear { velocity: f64, direction: Vector3<f64> },
    /// Circle of `radius` about the vertical axis through the start position, turning `rate` rad/frame;
    /// the camera yaws with the orbit.
    Orbit { rate: f64, radius: f64 },
    /// Explicit poses; the frame count is their number.
    Scripted(Vec<PoseSE3>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub motion: Motion,
    pub frames: usize,
    pub start: PoseSE3,
}

impl TrajectorySpec {
    pub fn linear(start: PoseSE3, direction: Vector3<f64>, velocity: f64, frames: usize) -> Self {
        Self { motion: Motion::Linear { velocity, direction }, frames, start }
    }

    pub fn orbit(start: PoseSE3, radius: f64, rate: f64, frames: usize) -> Self {
        Self { motion: Motion::Orbit { rate, radius }, frames, start }
    }

    pub fn scripted(poses: Vec<PoseSE3>) -> Self {
        let start = poses.first().copied().unwrap_or_else(PoseSE3::identity);
        Self { frames: poses.len(), motion: Motion::Scripted(poses), start }
    }

    pub fn poses(&self) -> Result<Vec<PoseSE3>, SynthError> {
        if self.frames == 0 {
            return Err(SynthError::InvalidSpec("trajectory needs at least one frame".into()));
        }
        match &self.motion {
            Motion::Linear { velocity, direction } => {
                let norm = direction.norm();
                if !(norm > 0.0 && norm.is_finite() && velocity.is_finite()) {
                    return Err(SynthError::InvalidSpec("linear motion needs a nonzero direction".into()));
                }
                let step = direction / norm * *velocity;
                Ok((0..self.frames)
                    .map(|i| {
                        let t = self.start.translation() + step * i as f64;
                        PoseSE3::new(*self.start.rotation(), t)
                    })
                    .collect::<Result<_, _>>()?)
            }
            Motion::Orbit { rate, radius } => {
                if !(rate.is_finite() && *radius >= 0.0 && radius.is_finite()) {
                    return Err(SynthError::InvalidSpec("orbit rate and radius must be finite".into()));
                }
                let center = self.start.translation();
                Ok((0..self.frames)
                    .map(|i| {
                        let phi = rate * i as f64;
                        let t = center + Vector3::new(phi.cos(), phi.sin(), 0.0) * *radius;
                        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), phi).into_inner() * self.start.rotation();
                        PoseSE3::new(r, t)
                    })
                    .collect::<Result<_, _>>()?)
            }
            Motion::Scripted(poses) => {
                if poses.len() != self.frames {
                    return Err(SynthError::InvalidSpec("scripted frame count must equal the pose count".into()));
                }
                Ok(poses.clone())
            }
        }
    }
}

/// Degradation applied to produce the `noisy` depth source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of additive Gaussian depth noise, meters.
    pub sigma: f64,
    /// Fraction of pixels set to invalid.
    pub dropout: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.sigma >= 0.0 && self.sigma.is_finite() && (0.0..=1.0).contains(&self.dropout) {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(format!("noise sigma {} / dropout {}", self.sigma, self.dropout)))
        }
    }

    /// Applies the degradation for frame `index`; the result depends only on `(self, index, depth)`.
    pub fn apply(&self, depth: &DepthMap, index: u64) -> DepthMap {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let values = depth
            .values()
            .iter()
            .map(|&d| {
                let n: f64 = rng.sample(StandardNormal);
                let drop = rng.gen::<f64>() < self.dropout;
                let v = d + self.sigma * n;
                if drop || d <= 0.0 || v <= 0.0 {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        DepthMap::new(depth.width(), depth.height(), values).expect("degraded depth stays valid")
    }
}

/// Renders every pose of `traj` into a session with a `gt` source and, if requested, a `noisy` one.
pub fn generate_session(
    scene: &BoxScene,
    traj: &TrajectorySpec,
    k: &Intrinsics,
    fps: f64,
    noise: Option<&NoiseSpec>,
) -> Result<Session, SynthError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("fps {fps}")));
    }
    if let Some(n) = noise {
        n.validate()?;
    }
    let poses = traj.poses()?;
    // consecutive identical poses share one render
    let mut unique: Vec<usize> = Vec::new();
    for (i, p) in poses.iter().enumerate() {
        if i == 0 || poses[i - 1] != *p {
            unique.push(i);
        }
    }
    let renders = unique
        .par_iter()
        .map(|&i| render_frame(scene, &poses[i], k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut frames = Vec::with_capacity(poses.len());
    let mut slot = 0;
    for (i, pose) in poses.iter().enumerate() {
        if slot + 1 < unique.len() && unique[slot + 1] == i {
            slot += 1;
        }
        let view = &renders[slot];
        let mut sources = BTreeMap::new();
        if let Some(n) = noise {
            sources.insert(NOISY_SOURCE.to_string(), n.apply(&view.depth, i as u64));
        }
        sources.insert(GT_SOURCE.to_string(), view.depth.clone());
        frames.push(Frame {
            index: i as u64,
            timestamp_us: (i as f64 * 1e6 / fps).round() as i64,
            rgb: view.rgb.clone(),
            depth_sources: sources,
            pose: *pose,
        });
    }
    Ok(Session::new(frames, *k, fps)?)
}

struct Face {
    normal_axis: usize,
    offset: f64,
    /// In-plane axes (u, v) and their half sizes.
    axes: [usize; 2],
    half: [f64; 2],
}

fn faces(scene: &BoxScene) -> Vec<Face> {
    let h = scene.half_extents();
    let mut out = Vec::new();
    for axis in 0..3 {
        let axes = match axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        };
        for sign in [-1.0, 1.0] {
            out.push(Face { normal_axis: axis, offset: sign * h[axis], axes, half: [h[axes[0]], h[axes[1]]] });
        }
    }
    out
}

/// Largest-remainder split of `total` proportionally to `weights`.
fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|a, b| (exact[*b] - exact[*b].floor()).total_cmp(&(exact[*a] - exact[*a].floor())).then(a.cmp(b)));
    let missing = total - counts.iter().sum::<usize>();
    for i in order.into_iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

fn face_rows(n: usize, face: &Face) -> usize {
    if n == 0 {
        return 0;
    }
    let aspect = face.half[1] / face.half[0];
    ((n as f64 * aspect).sqrt().round() as usize).clamp(1, n)
}

/// Largest cell diagonal of the stratified sampling used by [`scene_ground_truth_cloud`].
pub fn ground_truth_stratum_diagonal(scene: &BoxScene, samples_per_m2: f64) -> f64 {
    let fs = faces(scene);
    let total = ground_truth_count(scene, samples_per_m2);
    let counts = allocate(total, &fs.iter().map(|f| 4.0 * f.half[0] * f.half[1]).collect::<Vec<_>>());
    let mut worst: f64 = 0.0;
    for (f, n) in fs.iter().zip(counts) {
        let rows = face_rows(n, f);
        if rows == 0 {
            continue;
        }
        let min_per_row = n / rows;
        let cell_w = 2.0 * f.half[0] / min_per_row.max(1) as f64;
        let cell_h = 2.0 * f.half[1] / rows as f64;
        worst = worst.max(cell_w.hypot(cell_h));
    }
    worst
}

fn ground_truth_count(scene: &BoxScene, samples_per_m2: f64) -> usize {
    let e = scene.extents;
    let area = 2.0 * (e.x * e.y + e.x * e.z + e.y * e.z);
    (area * samples_per_m2).round() as usize
}

/// Stratified, jittered samples of all six interior faces (world frame).
pub fn scene_ground_truth_cloud(scene: &BoxScene, samples_per_m2: f64, seed: u64) -> Result<PointCloud, SynthError> {
    scene.validate()?;
    if !(samples_per_m2 > 0.0 && samples_per_m2.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("sample density {samples_per_m2}")));
    }
    let fs = faces(scene);
    let total = ground_truth_count(scene, samples_per_m2);
    let counts = allocate(total, &fs.iter().map(|f| 4.0 * f.half[0] * f.half[1]).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(total);
    for (f, n) in fs.iter().zip(counts) {
        let rows = face_rows(n, f);
        for r in 0..rows {
            let in_row = n / rows + usize::from(r < n % rows);
            let cell_h = 2.0 * f.half[1] / rows as f64;
            let cell_w = 2.0 * f.half[0] / in_row as f64;
            for c in 0..in_row {
                let u = -f.half[0] + (c as f64 + rng.gen::<f64>()) * cell_w;
                let v = -f.half[1] + (r as f64 + rng.gen::<f64>()) * cell_h;
                let mut p = Vector3::zeros();
                p[f.normal_axis] = f.offset;
                p[f.axes[0]] = u;
                p[f.axes[1]] = v;
                points.push(scene.pose.transform_point(&p));
            }
        }
    }
    Ok(PointCloud::from_points(points))
}

/// Camera-to-world rotation for a camera looking along `forward` with image-down along `down`.
pub fn look_rotation(forward: Vector3<f64>, down: Vector3<f64>) -> Result<Matrix3<f64>, SynthError> {
    let z = forward.normalize();
    let y = down - z * down.dot(&z);
    if !(y.norm() > 1e-9 && z.iter().all(|v| v.is_finite())) {
        return Err(SynthError::InvalidSpec("forward and down directions must not be parallel".into()));
    }
    let y = y.normalize();
    Ok(Matrix3::from_columns(&[y.cross(&z), y, z]))
}

/// Six axis-aligned views (+x, -x, +y, -y, up, down) from `position`, each held for `hold` frames.
pub fn cube_stations(position: Vector3<f64>, hold: usize) -> Result<Vec<PoseSE3>, SynthError> {
    let down = -Vector3::z();
    let views = [
        (Vector3::x(), down),
        (-Vector3::x(), down),
        (Vector3::y(), down),
        (-Vector3::y(), down),
        (Vector3::z(), Vector3::y()),
        (-Vector3::z(), -Vector3::y()),
    ];
    let mut poses = Vec::with_capacity(6 * hold);
    for (forward, d) in views {
        let pose = PoseSE3::new(look_rotation(forward, d)?, position)?;
        poses.extend(std::iter::repeat(pose).take(hold));
    }
    Ok(poses)
}

/// Ready-made sessions used throughout the test suites and the `synth` command.
pub mod presets {
    use super::*;

    pub const STRAFE_VELOCITY: f64 = 0.05;

    pub fn strafe_intrinsics() -> Intrinsics {
        Intrinsics::centered(140.0, 160, 120).expect("valid preset intrinsics")
    }

    /// Starts 3 m from the +x wall and moves toward it at 0.05 m/frame while facing the -y wall.
    pub fn strafe(frames: usize) -> TrajectorySpec {
        let r = look_rotation(-Vector3::y(), -Vector3::z()).expect("valid preset");
        let start = PoseSE3::new(r, Vector3::new(-1.0, 1.2, 0.0)).expect("valid preset");
        TrajectorySpec::linear(start, Vector3::x(), STRAFE_VELOCITY, frames)
    }

    /// Slow orbit around the room center, looking outward and slightly down.
    pub fn orbit(frames: usize) -> TrajectorySpec {
        let forward = Vector3::new(1.0, 0.0, -0.25);
        let r = look_rotation(forward, -Vector3::z()).expect("valid preset");
        let start = PoseSE3::new(r, Vector3::new(0.0, 0.0, 0.1)).expect("valid preset");
        TrajectorySpec::orbit(start, 0.6, 0.02, frames)
    }

    pub fn stations_intrinsics() -> Intrinsics {
        Intrinsics::centered(80.0, 200, 200).expect("valid preset intrinsics")
    }

    /// Six cube-map stations at the room center, each held for `hold` frames.
    pub fn stations(hold: usize) -> TrajectorySpec {
        TrajectorySpec::scripted(cube_stations(Vector3::zeros(), hold).expect("valid preset"))
    }

    pub fn default_noise(seed: u64) -> NoiseSpec {
        NoiseSpec { sigma: 0.02, dropout: 0.1, seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_sums_to_total() {
        let c = allocate(10, &[1.0, 1.0, 1.0]);
        assert_eq!(c.iter().sum::<usize>(), 10);
        assert_eq!(c, vec![4, 3, 3]);
    }

    #[test]
    fn look_rotation_is_right_handed() {
        let r = look_rotation(Vector3::y(), -Vector3::z()).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert_eq!(r.column(0).into_owned(), Vector3::new(1.0, 0.0, 0.0));
        assert!(look_rotation(Vector3::z(), Vector3::z()).is_err());
    }

    #[test]
    fn orbit_keeps_radius() {
        let traj = presets::orbit(50);
        let poses = traj.poses().unwrap();
        for p in &poses {
            let d = p.translation() - traj.start.translation();
            assert!((d.norm() - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_with_zero_strength_is_identity() {
        let d = DepthMap::from_fn(8, 8, |x, y| 1.0 + f64::from(x + y) * 0.1).unwrap();
        let n = NoiseSpec { sigma: 0.0, dropout: 0.0, seed: 3 };
        assert_eq!(n.apply(&d, 5), d);
    }

    #[test]
    fn scripted_count_mismatch_is_rejected() {
        let mut t = TrajectorySpec::scripted(vec![PoseSE3::identity(); 3]);
        t.frames = 4;
        assert!(t.poses().is_err());
    }
}
