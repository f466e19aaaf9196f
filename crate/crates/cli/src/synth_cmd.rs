use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sparsense_core::dataset::{save_pointcloud_ply, save_session, PlyFormat};
use sparsense_core::geometry::{Intrinsics, PoseSE3};
use sparsense_core::synth::{generate_session, presets, scene_ground_truth_cloud, BoxScene, NoiseSpec, TrajectorySpec};

use crate::args::Room;
use crate::output::{self, SCHEMA_VERSION};
use crate::UsageError;

/// Room description stored next to a generated session.
pub const SCENE_FILE: &str = "scene.json";
pub const GT_CLOUD_FILE: &str = "gt_cloud.ply";
const DEFAULT_ROOM: [f64; 3] = [4.0, 3.0, 2.5];
/// Distance kept between a linear path and the walls it starts and ends near, meters.
const LINEAR_START_CLEARANCE: f64 = 1.0;
const LINEAR_END_CLEARANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Trajectory {
    /// Sideways walk toward the +x wall while facing the -y wall.
    Linear,
    /// Circle about the room center, looking outward.
    Orbit,
    /// Six axis-aligned views from the room center; frames must be a multiple of 6.
    Stations,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output session directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub frames: usize,
    #[arg(long, value_enum, default_value_t = Trajectory::Linear)]
    pub traj: Trajectory,
    /// Linear speed, meters per frame.
    #[arg(long, default_value_t = presets::STRAFE_VELOCITY)]
    pub velocity: f64,
    /// Orbit radius, meters.
    #[arg(long, default_value_t = 0.6)]
    pub radius: f64,
    /// Orbit turn rate, radians per frame.
    #[arg(long, default_value_t = 0.02)]
    pub rate: f64,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// Focal length in pixels.
    #[arg(long)]
    pub focal: Option<f64>,
    #[arg(long, default_value_t = 60.0)]
    pub fps: f64,
    /// Room size X,Y,Z in meters [default: 4,3,2.5, with X lengthened to fit a linear path].
    #[arg(long)]
    pub room: Option<Room>,
    /// Standard deviation of the "noisy" depth source, meters.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Fraction of pixels dropped from the "noisy" depth source.
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Also write the analytic wall cloud at this many samples per square meter.
    #[arg(long)]
    pub gt_density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub schema_version: u32,
    pub extents: [f64; 3],
    /// Scene-to-world pose, row-major 4x4.
    pub pose: Vec<f64>,
}

impl SceneFile {
    pub fn from_scene(scene: &BoxScene) -> Self {
        let e = scene.extents;
        Self { schema_version: SCHEMA_VERSION, extents: [e.x, e.y, e.z], pose: scene.pose.to_row_major().to_vec() }
    }

    pub fn to_scene(&self) -> anyhow::Result<BoxScene> {
        let m: [f64; 16] = self.pose.as_slice().try_into().context("scene pose needs 16 numbers")?;
        let scene = BoxScene { extents: Vector3::from(self.extents), pose: PoseSE3::from_row_major(&m)?, ..BoxScene::default() };
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(session_dir: &Path) -> anyhow::Result<Option<BoxScene>> {
        let path = session_dir.join(SCENE_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let file: SceneFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(file.to_scene()?))
    }
}

pub struct SynthPlan {
    out: PathBuf,
    scene: BoxScene,
    traj: TrajectorySpec,
    k: Intrinsics,
    fps: f64,
    noise: Option<NoiseSpec>,
    gt_density: Option<f64>,
}

impl SynthArgs {
    pub fn plan(&self) -> Result<SynthPlan, UsageError> {
        let bad = |m: String| Err(UsageError(m));
        if self.frames == 0 {
            return bad("--frames must be at least 1".into());
        }
        if !(self.velocity >= 0.0 && self.velocity.is_finite()) {
            return bad(format!("--velocity {} must be a non-negative number", self.velocity));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite() && self.rate.is_finite()) {
            return bad("--radius must be non-negative and --rate finite".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("--fps {} must be positive", self.fps));
        }
        if self.gt_density.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return bad("--gt-density must be positive".into());
        }
        let noise = (self.noise_sigma.is_some() || self.dropout.is_some()).then(|| NoiseSpec {
            sigma: self.noise_sigma.unwrap_or(0.0),
            dropout: self.dropout.unwrap_or(0.0),
            seed: self.seed,
        });
        if let Some(n) = &noise {
            n.validate().map_err(|e| UsageError(e.to_string()))?;
        }

        let mut room = self.room.map_or(DEFAULT_ROOM, |r| r.0);
        let (traj, preset_k) = match self.traj {
            Trajectory::Linear => {
                if self.room.is_none() {
                    let travel = self.velocity * (self.frames - 1) as f64;
                    room[0] = room[0].max(LINEAR_START_CLEARANCE + travel + LINEAR_END_CLEARANCE);
                }
                let preset = presets::strafe(1).start;
                let at = Vector3::new(-room[0] / 2.0 + LINEAR_START_CLEARANCE, preset.translation().y, preset.translation().z);
                let start = PoseSE3::new(*preset.rotation(), at).map_err(|e| UsageError(e.to_string()))?;
                (TrajectorySpec::linear(start, Vector3::x(), self.velocity, self.frames), presets::strafe_intrinsics())
            }
            Trajectory::Orbit => {
                let start = presets::orbit(1).start;
                (TrajectorySpec::orbit(start, self.radius, self.rate, self.frames), presets::strafe_intrinsics())
            }
            Trajectory::Stations => {
                if self.frames % 6 != 0 {
                    return bad(format!("--traj stations needs a multiple of 6 frames, got {}", self.frames));
                }
                (presets::stations(self.frames / 6), presets::stations_intrinsics())
            }
        };
        let k = Intrinsics::centered(
            self.focal.unwrap_or(preset_k.fx),
            self.width.unwrap_or(preset_k.width),
            self.height.unwrap_or(preset_k.height),
        )
        .map_err(|e| UsageError(e.to_string()))?;
        let scene = BoxScene { extents: Vector3::from(room), ..BoxScene::default() };
        Ok(SynthPlan { out: self.out.clone(), scene, traj, k, fps: self.fps, noise, gt_density: self.gt_density })
    }
}

fn replace_dir(tmp: &Path, out: &Path) -> anyhow::Result<()> {
    if out.exists() {
        let is_session = out.join("manifest.json").is_file();
        let is_empty = out.is_dir() && fs::read_dir(out)?.next().is_none();
        if !(is_session || is_empty) {
            bail!("{} exists and is not a session directory; refusing to overwrite", out.display());
        }
        fs::remove_dir_all(out).with_context(|| format!("removing old {}", out.display()))?;
    }
    fs::rename(tmp, out).with_context(|| format!("renaming {} to {}", tmp.display(), out.display()))
}

pub fn execute(plan: &SynthPlan) -> anyhow::Result<()> {
    let session = generate_session(&plan.scene, &plan.traj, &plan.k, plan.fps, plan.noise.as_ref())?;
    let tmp = output::temp_sibling(&plan.out)?;
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    let result = (|| {
        let report = save_session(&session, &tmp)?;
        output::write_json(&tmp.join(SCENE_FILE), &SceneFile::from_scene(&plan.scene))?;
        if let Some(density) = plan.gt_density {
            let cloud = scene_ground_truth_cloud(&plan.scene, density, 0)?;
            save_pointcloud_ply(&cloud, &tmp.join(GT_CLOUD_FILE), PlyFormat::BinaryLittleEndian)?;
        }
        replace_dir(&tmp, &plan.out)?;
        Ok::<_, anyhow::Error>(report)
    })();
    match result {
        Ok(report) => {
            println!("wrote {} frames ({} depth images) to {}", report.frames, report.depth_images, plan.out.display());
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}
