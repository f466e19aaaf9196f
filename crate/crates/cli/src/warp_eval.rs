use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sparsense_core::dataset::{load_session, Session};
use sparsense_core::metrics::{ssim_depth, ssim_rgb, MetricsError, DEFAULT_DEPTH_RANGE_M};
use sparsense_core::policies::{percentile, sample_pairs, DEFAULT_MAX_PAIRS_PER_GAP, DEFAULT_SEED};
use sparsense_core::warp::{warp_frame, DEFAULT_AREA_PERCENTILE};

use crate::args::UsizeList;
use crate::output::{self, SCHEMA_VERSION};
use crate::plot::{line_chart, Series};
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskMode {
    /// Score only pixels the warp filled (and, for depth, where the reference is valid).
    Valid,
    /// Score every pixel; holes count as black / zero depth.
    Full,
}

impl MaskMode {
    fn name(self) -> &'static str {
        match self {
            MaskMode::Valid => "valid",
            MaskMode::Full => "full",
        }
    }
}

#[derive(Debug, Args)]
pub struct WarpEvalArgs {
    /// Session directory.
    #[arg(long)]
    pub session: PathBuf,
    /// Depth sources to warp with, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "gt")]
    pub depth_source: Vec<String>,
    /// Frame gaps as `a,b,c` or `start..end:step`; gap 0 warps each frame onto itself.
    #[arg(long, default_value = "10..100:10")]
    pub gaps: UsizeList,
    #[arg(long, default_value_t = DEFAULT_MAX_PAIRS_PER_GAP)]
    pub pairs_per_gap: usize,
    #[arg(long, value_enum, default_value_t = MaskMode::Valid)]
    pub mask: MaskMode,
    /// Depth source the warped depth is scored against [default: gt if present, else the warped source].
    #[arg(long)]
    pub reference_depth: Option<String>,
    /// Triangles above this percentile of 3D area are discarded.
    #[arg(long, default_value_t = DEFAULT_AREA_PERCENTILE)]
    pub area_percentile: f64,
    /// Depth range used to normalize depth SSIM, meters.
    #[arg(long, default_value_t = DEFAULT_DEPTH_RANGE_M)]
    pub depth_range: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Aggregate CSV, one row per (gap, depth source).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-pair CSV.
    #[arg(long)]
    pub per_pair: Option<PathBuf>,
    /// Optional SVG chart of mean SSIM against gap.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

/// Aggregate over the sampled pairs of one gap and depth source; SSIM columns skip pairs with nothing to score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpRow {
    pub schema_version: u32,
    pub gap: usize,
    pub depth_source: String,
    pub reference_depth: String,
    pub mask: String,
    pub pairs: usize,
    pub scored_pairs: usize,
    pub rgb_ssim: Option<f64>,
    pub rgb_ssim_median: Option<f64>,
    pub rgb_ssim_p10: Option<f64>,
    pub rgb_ssim_p90: Option<f64>,
    pub depth_ssim: Option<f64>,
    pub depth_ssim_median: Option<f64>,
    pub depth_ssim_p10: Option<f64>,
    pub depth_ssim_p90: Option<f64>,
    pub overlap: f64,
    pub overlap_median: f64,
    pub overlap_p10: f64,
    pub overlap_p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub schema_version: u32,
    pub gap: usize,
    pub depth_source: String,
    pub source_frame: u64,
    pub target_frame: u64,
    pub rgb_ssim: Option<f64>,
    pub depth_ssim: Option<f64>,
    pub overlap: f64,
}

pub struct WarpPlan {
    args: WarpEvalArgs,
}

impl WarpEvalArgs {
    pub fn plan(self) -> Result<WarpPlan, UsageError> {
        if self.depth_source.is_empty() || self.depth_source.iter().any(String::is_empty) {
            return Err(UsageError("--depth-source needs at least one non-empty name".into()));
        }
        if self.gaps.0.is_empty() {
            return Err(UsageError("--gaps is empty".into()));
        }
        if self.pairs_per_gap == 0 {
            return Err(UsageError("--pairs-per-gap must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.area_percentile) {
            return Err(UsageError(format!("--area-percentile {} is outside [0, 100]", self.area_percentile)));
        }
        if !(self.depth_range > 0.0 && self.depth_range.is_finite()) {
            return Err(UsageError("--depth-range must be positive".into()));
        }
        Ok(WarpPlan { args: self })
    }
}

struct Job<'a> {
    gap: usize,
    source: &'a str,
    from: usize,
}

struct Scores {
    rgb: Option<f64>,
    depth: Option<f64>,
    overlap: f64,
}

fn nonempty(r: Result<f64, MetricsError>) -> anyhow::Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::EmptyMask) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn score(session: &Session, job: &Job, reference: &str, a: &WarpEvalArgs) -> anyhow::Result<Scores> {
    let (src, dst) = (session.frame(job.from), session.frame(job.from + job.gap));
    let w = warp_frame(src, job.source, &dst.pose, session.intrinsics(), a.area_percentile)?;
    let target_depth = dst.depth(reference)?;
    let (rgb_mask, depth_mask) = match a.mask {
        MaskMode::Valid => {
            let both: Vec<bool> = w.valid_mask.iter().zip(target_depth.values()).map(|(v, d)| *v && *d > 0.0).collect();
            (Some(w.valid_mask.clone()), Some(both))
        }
        MaskMode::Full => (None, None),
    };
    Ok(Scores {
        rgb: nonempty(ssim_rgb(&w.rgb, &dst.rgb, rgb_mask.as_deref()))?,
        depth: nonempty(ssim_depth(&w.depth, target_depth, depth_mask.as_deref(), a.depth_range))?,
        overlap: w.overlap_ratio,
    })
}

struct Summary {
    mean: Option<f64>,
    median: Option<f64>,
    p10: Option<f64>,
    p90: Option<f64>,
}

fn summarize(values: impl Iterator<Item = f64>) -> Summary {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return Summary { mean: None, median: None, p10: None, p90: None };
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.sort_by(f64::total_cmp);
    Summary { mean: Some(mean), median: Some(percentile(&v, 50.0)), p10: Some(percentile(&v, 10.0)), p90: Some(percentile(&v, 90.0)) }
}

pub fn execute(plan: &WarpPlan) -> anyhow::Result<()> {
    let a = &plan.args;
    let session = load_session(&a.session).with_context(|| format!("loading session {}", a.session.display()))?;
    let reference = match &a.reference_depth {
        Some(r) => r.clone(),
        None if session.common_depth_sources().iter().any(|s| s == "gt") => "gt".to_string(),
        None => a.depth_source[0].clone(),
    };
    for name in a.depth_source.iter().chain(std::iter::once(&reference)) {
        if !session.common_depth_sources().contains(name) {
            anyhow::bail!("depth source '{name}' is not present in every frame of {}", a.session.display());
        }
    }
    let mut sources = a.depth_source.clone();
    sources.sort();
    sources.dedup();

    let mut jobs = Vec::new();
    for &gap in &a.gaps.0 {
        if gap >= session.len() {
            warn!("gap {gap} skipped: session has {} frames", session.len());
            continue;
        }
        let starts = sample_pairs(session.len(), gap, a.pairs_per_gap, a.seed);
        for source in &sources {
            jobs.extend(starts.iter().map(|&from| Job { gap, source, from }));
        }
    }
    let scores = jobs.par_iter().map(|j| score(&session, j, &reference, a)).collect::<anyhow::Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    let mut i = 0;
    while i < jobs.len() {
        let (gap, source) = (jobs[i].gap, jobs[i].source);
        let end = i + jobs[i..].iter().take_while(|j| j.gap == gap && j.source == source).count();
        let group = &scores[i..end];
        let rgb = summarize(group.iter().filter_map(|s| s.rgb));
        let depth = summarize(group.iter().filter_map(|s| s.depth));
        let overlap = summarize(group.iter().map(|s| s.overlap));
        rows.push(WarpRow {
            schema_version: SCHEMA_VERSION,
            gap,
            depth_source: source.to_string(),
            reference_depth: reference.clone(),
            mask: a.mask.name().to_string(),
            pairs: group.len(),
            scored_pairs: group.iter().filter(|s| s.rgb.is_some() && s.depth.is_some()).count(),
            rgb_ssim: rgb.mean,
            rgb_ssim_median: rgb.median,
            rgb_ssim_p10: rgb.p10,
            rgb_ssim_p90: rgb.p90,
            depth_ssim: depth.mean,
            depth_ssim_median: depth.median,
            depth_ssim_p10: depth.p10,
            depth_ssim_p90: depth.p90,
            overlap: overlap.mean.expect("every group has a pair"),
            overlap_median: overlap.median.expect("every group has a pair"),
            overlap_p10: overlap.p10.expect("every group has a pair"),
            overlap_p90: overlap.p90.expect("every group has a pair"),
        });
        for (j, s) in jobs[i..end].iter().zip(group) {
            pairs.push(PairRow {
                schema_version: SCHEMA_VERSION,
                gap,
                depth_source: source.to_string(),
                source_frame: session.frame(j.from).index,
                target_frame: session.frame(j.from + gap).index,
                rgb_ssim: s.rgb,
                depth_ssim: s.depth,
                overlap: s.overlap,
            });
        }
        i = end;
    }

    output::write_csv(&a.out, &rows)?;
    if let Some(p) = &a.per_pair {
        output::write_csv(p, &pairs)?;
    }
    if let Some(p) = &a.plot {
        let mut series = Vec::new();
        for source in &sources {
            let pick = |f: fn(&WarpRow) -> Option<f64>| -> Vec<(f64, f64)> {
                rows.iter().filter(|r| &r.depth_source == source).filter_map(|r| f(r).map(|v| (r.gap as f64, v))).collect()
            };
            series.push(Series { label: format!("{source} rgb"), points: pick(|r| r.rgb_ssim) });
            series.push(Series { label: format!("{source} depth"), points: pick(|r| r.depth_ssim) });
        }
        output::write_atomic(p, line_chart("Warp fidelity", "frame gap", "mean SSIM", &series).as_bytes())?;
    }
    Ok(())
}
