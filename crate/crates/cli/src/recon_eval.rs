use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, ValueEnum};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sparsense_core::dataset::{load_pointcloud_ply, load_session, save_pointcloud_ply, PlyFormat, PointCloud};
use sparsense_core::metrics::{hausdorff, HausdorffParams, DEFAULT_OVERLAP_MARGIN_M};
use sparsense_core::recon::{reconstruct_session, IcpParams, MergeMethod, DEFAULT_PIXEL_STRIDE, DEFAULT_VOXEL_SIZE_M};
use sparsense_core::synth::{scene_ground_truth_cloud, BoxScene};

use crate::args::{Room, UsizeList};
use crate::output::{self, SCHEMA_VERSION};
use crate::plot::{line_chart, Series};
use crate::synth_cmd::SceneFile;
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Concat,
    Fused,
    FusedIcp,
}

#[derive(Debug, Args)]
pub struct ReconEvalArgs {
    /// Session directory.
    #[arg(long, required_unless_present = "reconstruction")]
    pub session: Option<PathBuf>,
    /// Depth sources to reconstruct from, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "gt")]
    pub depth_source: Vec<String>,
    /// Frame strides as `a,b,c` or `start..end:step`.
    #[arg(long, default_value = "1")]
    pub stride: UsizeList,
    #[arg(long, value_enum, default_value_t = Method::Fused)]
    pub method: Method,
    /// Voxel edge for fused methods, meters.
    #[arg(long, default_value_t = DEFAULT_VOXEL_SIZE_M)]
    pub voxel_size: f64,
    /// Lift every n-th pixel along both image axes.
    #[arg(long, default_value_t = DEFAULT_PIXEL_STRIDE)]
    pub pixel_stride: u32,
    #[arg(long, default_value_t = IcpParams::default().max_iterations)]
    pub icp_max_iterations: usize,
    /// ICP correspondence gate, meters.
    #[arg(long, default_value_t = IcpParams::default().max_correspondence_distance)]
    pub icp_max_distance: f64,
    /// Ground-truth cloud or mesh vertices (PLY).
    #[arg(long, conflicts_with = "synthetic_room", required_unless_present = "synthetic_room")]
    pub gt_cloud: Option<PathBuf>,
    /// Sample the walls of the synthetic room as ground truth (room read from the session, else --room).
    #[arg(long)]
    pub synthetic_room: bool,
    /// Room size X,Y,Z for --synthetic-room when the session does not record one [default: 4,3,2.5].
    #[arg(long)]
    pub room: Option<Room>,
    /// Wall samples per square meter for --synthetic-room.
    #[arg(long, default_value_t = 10_000.0)]
    pub gt_density: f64,
    /// Margin added to the shared bounding box before comparing, meters.
    #[arg(long, default_value_t = DEFAULT_OVERLAP_MARGIN_M)]
    pub overlap_margin: f64,
    /// Evaluate an existing reconstruction (PLY cloud or mesh vertices) instead of building one.
    #[arg(long, conflicts_with = "session")]
    pub reconstruction: Option<PathBuf>,
    /// Record wall-clock seconds per record; the output is then no longer reproducible.
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Write each reconstruction as `<dir>/<source>_stride<k>.ply`.
    #[arg(long)]
    pub save_clouds: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG chart of Hausdorff distance against stride.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthInfo {
    pub kind: String,
    pub path: Option<String>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconRecord {
    pub depth_source: String,
    pub stride: Option<usize>,
    pub frames: Option<usize>,
    pub skipped_frames: Vec<usize>,
    pub points: usize,
    pub hausdorff: f64,
    pub directed_recon_to_gt: f64,
    pub directed_gt_to_recon: f64,
    pub recon_points_compared: usize,
    pub gt_points_compared: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub schema_version: u32,
    pub command: String,
    pub method: MergeMethod,
    pub pixel_stride: u32,
    pub overlap_margin: f64,
    pub ground_truth: GroundTruthInfo,
    pub records: Vec<ReconRecord>,
}

pub struct ReconPlan {
    args: ReconEvalArgs,
    method: MergeMethod,
}

impl ReconEvalArgs {
    pub fn plan(self) -> Result<ReconPlan, UsageError> {
        let voxel_size = self.voxel_size;
        let icp = IcpParams {
            max_iterations: self.icp_max_iterations,
            max_correspondence_distance: self.icp_max_distance,
            ..IcpParams::default()
        };
        let method = match self.method {
            Method::Concat => MergeMethod::Concat,
            Method::Fused => MergeMethod::Fused { voxel_size },
            Method::FusedIcp => MergeMethod::FusedIcp { voxel_size, icp },
        };
        method.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.session.is_some() && (self.stride.0.is_empty() || self.stride.0.contains(&0)) {
            return Err(UsageError("--stride values must be at least 1".into()));
        }
        if self.pixel_stride == 0 {
            return Err(UsageError("--pixel-stride must be at least 1".into()));
        }
        if self.depth_source.iter().any(String::is_empty) {
            return Err(UsageError("--depth-source names must be non-empty".into()));
        }
        if !(self.gt_density > 0.0 && self.gt_density.is_finite()) {
            return Err(UsageError("--gt-density must be positive".into()));
        }
        if !(self.overlap_margin >= 0.0) {
            return Err(UsageError("--overlap-margin must be non-negative".into()));
        }
        Ok(ReconPlan { args: self, method })
    }
}

fn ground_truth(a: &ReconEvalArgs) -> anyhow::Result<(PointCloud, GroundTruthInfo)> {
    if let Some(p) = &a.gt_cloud {
        let cloud = load_pointcloud_ply(p).with_context(|| format!("loading {}", p.display()))?;
        let info = GroundTruthInfo { kind: "ply".into(), path: Some(p.display().to_string()), points: cloud.len() };
        return Ok((cloud, info));
    }
    let recorded = match &a.session {
        Some(dir) if a.room.is_none() => SceneFile::load(dir)?,
        _ => None,
    };
    let scene = recorded.unwrap_or_else(|| match a.room {
        Some(r) => BoxScene { extents: r.0.into(), ..BoxScene::default() },
        None => BoxScene::default(),
    });
    let cloud = scene_ground_truth_cloud(&scene, a.gt_density, a.seed)?;
    let info = GroundTruthInfo { kind: "synthetic_room".into(), path: None, points: cloud.len() };
    Ok((cloud, info))
}

fn compare(recon: &PointCloud, gt: &PointCloud, margin: f64) -> anyhow::Result<(f64, f64, f64, usize, usize)> {
    let h = hausdorff(recon, gt, &HausdorffParams { overlap_margin: margin })?;
    Ok((h.distance, h.directed_ab, h.directed_ba, h.points_a, h.points_b))
}

fn cloud_path(dir: &Path, source: &str, stride: usize) -> PathBuf {
    dir.join(format!("{source}_stride{stride}.ply"))
}

pub fn execute(plan: &ReconPlan) -> anyhow::Result<()> {
    let a = &plan.args;
    let (gt, gt_info) = ground_truth(a)?;
    let mut records = Vec::new();

    if let Some(path) = &a.reconstruction {
        let started = Instant::now();
        let cloud = load_pointcloud_ply(path).with_context(|| format!("loading {}", path.display()))?;
        let (h, ab, ba, na, nb) = compare(&cloud, &gt, a.overlap_margin)?;
        records.push(ReconRecord {
            depth_source: "external".into(),
            stride: None,
            frames: None,
            skipped_frames: Vec::new(),
            points: cloud.len(),
            hausdorff: h,
            directed_recon_to_gt: ab,
            directed_gt_to_recon: ba,
            recon_points_compared: na,
            gt_points_compared: nb,
            runtime_s: a.timing.then(|| started.elapsed().as_secs_f64()),
        });
    } else {
        let dir = a.session.as_ref().expect("required unless --reconstruction");
        let session = load_session(dir).with_context(|| format!("loading session {}", dir.display()))?;
        let mut sources = a.depth_source.clone();
        sources.sort();
        sources.dedup();
        let items: Vec<(&String, usize)> = sources.iter().flat_map(|s| a.stride.0.iter().map(move |k| (s, *k))).collect();
        for &k in &a.stride.0 {
            if k > 1 && k >= session.len() {
                warn!("stride {k} keeps only frame 0 of {}", session.len());
            }
        }
        records = items
            .par_iter()
            .map(|&(source, stride)| {
                let started = Instant::now();
                let r = reconstruct_session(&session, source, stride, &plan.method, a.pixel_stride)?;
                if let Some(out) = &a.save_clouds {
                    std::fs::create_dir_all(out)?;
                    save_pointcloud_ply(&r.cloud, &cloud_path(out, source, stride), PlyFormat::BinaryLittleEndian)?;
                }
                let (h, ab, ba, na, nb) =
                    compare(&r.cloud, &gt, a.overlap_margin).with_context(|| format!("comparing {source} at stride {stride}"))?;
                Ok(ReconRecord {
                    depth_source: source.clone(),
                    stride: Some(stride),
                    frames: Some(r.frames.len()),
                    skipped_frames: r.skipped,
                    points: r.cloud.len(),
                    hausdorff: h,
                    directed_recon_to_gt: ab,
                    directed_gt_to_recon: ba,
                    recon_points_compared: na,
                    gt_points_compared: nb,
                    runtime_s: a.timing.then(|| started.elapsed().as_secs_f64()),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
    }

    let report = ReconReport {
        schema_version: SCHEMA_VERSION,
        command: "recon-eval".into(),
        method: plan.method,
        pixel_stride: a.pixel_stride,
        overlap_margin: a.overlap_margin,
        ground_truth: gt_info,
        records,
    };
    output::write_json(&a.out, &report)?;
    if let Some(p) = &a.plot {
        let mut sources: Vec<&String> = report.records.iter().map(|r| &r.depth_source).collect();
        sources.dedup();
        let series: Vec<Series> = sources
            .iter()
            .map(|s| Series {
                label: s.to_string(),
                points: report
                    .records
                    .iter()
                    .filter(|r| &r.depth_source == *s)
                    .map(|r| (r.stride.unwrap_or(0) as f64, r.hausdorff))
                    .collect(),
            })
            .collect();
        output::write_atomic(p, line_chart("Reconstruction error", "frame stride", "Hausdorff distance (m)", &series).as_bytes())?;
    }
    Ok(())
}
