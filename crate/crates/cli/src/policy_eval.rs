use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sparsense_core::dataset::{load_session, Session};
use sparsense_core::policies::{
    default_overlap_source, overlap_curve, select_frames, PolicySpec, SelectionReport, DEFAULT_MAX_PAIRS_PER_GAP,
    DEFAULT_MIN_OVERLAP, DEFAULT_SEED,
};

use crate::args::{F64List, UsizeList};
use crate::output::{self, SCHEMA_VERSION};
use crate::plot::{line_chart, Series};
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    /// Every k-th frame; sweep over k [default: 1..10].
    Temporal,
    /// Pose-distance threshold; sweep over thresholds [default: 0.05..0.5:0.05].
    Spatial,
    /// Overlap-greedy selection; sweep over minimum overlaps [default: --min-overlap].
    Oracle,
    /// Overlap statistics of sampled frame pairs; sweep over gaps [default: 10..100:10].
    OverlapCurve,
}

/// Writes one CSV row per sweep value.
///
/// Selection columns: schema_version, policy, parameter, rho, frames, selected, selection_ratio,
/// overlap_source, min_overlap, mean_overlap, selected_indices (space separated).
///
/// Overlap-curve columns: schema_version, depth_source, gap, pairs, mean, min, max, median, p10, p90.
#[derive(Debug, Args)]
pub struct PolicyEvalArgs {
    /// Session directory.
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, value_enum)]
    pub policy: PolicyKind,
    /// Sweep values as `a,b,c` or `start..end:step`.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Meters per radian in the pose distance.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_OVERLAP)]
    pub min_overlap: f64,
    /// Depth source driving the oracle and the overlap curve [default: gt if present].
    #[arg(long)]
    pub depth_source: Option<String>,
    /// Depth source for the reported consecutive overlaps [default: the policy's own or gt].
    #[arg(long)]
    pub overlap_source: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_PAIRS_PER_GAP)]
    pub pairs_per_gap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG chart.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub schema_version: u32,
    pub policy: String,
    pub parameter: f64,
    pub rho: Option<f64>,
    pub frames: usize,
    pub selected: usize,
    pub selection_ratio: f64,
    pub overlap_source: String,
    pub min_overlap: Option<f64>,
    pub mean_overlap: Option<f64>,
    pub selected_indices: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub schema_version: u32,
    pub depth_source: String,
    pub gap: usize,
    pub pairs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

enum Sweep {
    Intervals(Vec<usize>),
    Values(Vec<f64>),
}

pub struct PolicyPlan {
    args: PolicyEvalArgs,
    sweep: Sweep,
}

impl PolicyEvalArgs {
    pub fn plan(self) -> Result<PolicyPlan, UsageError> {
        let ints = |default: &str| -> Result<Vec<usize>, UsageError> {
            let v = self.sweep.as_deref().unwrap_or(default).parse::<UsizeList>().map_err(UsageError)?.0;
            if v.is_empty() || v.contains(&0) {
                return Err(UsageError("--sweep values must be at least 1".into()));
            }
            Ok(v)
        };
        let floats = |default: String| -> Result<Vec<f64>, UsageError> {
            let v = self.sweep.clone().unwrap_or(default).parse::<F64List>().map_err(UsageError)?.0;
            if v.is_empty() || v.iter().any(|x| *x <= 0.0) {
                return Err(UsageError("--sweep values must be positive".into()));
            }
            Ok(v)
        };
        let sweep = match self.policy {
            PolicyKind::Temporal => Sweep::Intervals(ints("1..10")?),
            PolicyKind::OverlapCurve => Sweep::Intervals(ints("10..100:10")?),
            PolicyKind::Spatial => Sweep::Values(floats("0.05..0.5:0.05".into())?),
            PolicyKind::Oracle => {
                let v = floats(self.min_overlap.to_string())?;
                if v.iter().any(|x| *x > 1.0) {
                    return Err(UsageError("minimum overlaps must lie in (0, 1]".into()));
                }
                Sweep::Values(v)
            }
        };
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(UsageError("--rho must be positive".into()));
        }
        if self.pairs_per_gap == 0 {
            return Err(UsageError("--pairs-per-gap must be at least 1".into()));
        }
        Ok(PolicyPlan { args: self, sweep })
    }
}

fn selection_row(session: &Session, parameter: f64, rho: Option<f64>, r: SelectionReport) -> SelectionRow {
    SelectionRow {
        schema_version: SCHEMA_VERSION,
        policy: r.policy,
        parameter,
        rho,
        frames: session.len(),
        selected: r.selected_indices.len(),
        selection_ratio: r.selection_ratio,
        overlap_source: r.overlap_source,
        min_overlap: r.min_overlap,
        mean_overlap: r.mean_overlap,
        selected_indices: r.selected_indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
    }
}

pub fn execute(plan: &PolicyPlan) -> anyhow::Result<()> {
    let a = &plan.args;
    let session = load_session(&a.session).with_context(|| format!("loading session {}", a.session.display()))?;
    let depth_source = match &a.depth_source {
        Some(s) => s.clone(),
        None => default_overlap_source(&session).context("session has no depth source shared by all frames")?,
    };
    let overlap = a.overlap_source.as_deref();

    if a.policy == PolicyKind::OverlapCurve {
        let Sweep::Intervals(gaps) = &plan.sweep else { unreachable!("overlap curves sweep gaps") };
        let rows: Vec<CurveRow> = overlap_curve(&session, gaps, &depth_source, a.pairs_per_gap, a.seed)?
            .into_iter()
            .map(|g| CurveRow {
                schema_version: SCHEMA_VERSION,
                depth_source: depth_source.clone(),
                gap: g.gap,
                pairs: g.pairs,
                mean: g.mean,
                min: g.min,
                max: g.max,
                median: g.median,
                p10: g.p10,
                p90: g.p90,
            })
            .collect();
        output::write_csv(&a.out, &rows)?;
        if let Some(p) = &a.plot {
            let series = [
                Series { label: "mean".into(), points: rows.iter().map(|r| (r.gap as f64, r.mean)).collect() },
                Series { label: "p10".into(), points: rows.iter().map(|r| (r.gap as f64, r.p10)).collect() },
                Series { label: "p90".into(), points: rows.iter().map(|r| (r.gap as f64, r.p90)).collect() },
            ];
            output::write_atomic(p, line_chart("Overlap against frame gap", "frame gap", "overlap ratio", &series).as_bytes())?;
        }
        return Ok(());
    }

    let specs: Vec<(f64, Option<f64>, PolicySpec)> = match (&plan.sweep, a.policy) {
        (Sweep::Intervals(v), _) => v.iter().map(|k| (*k as f64, None, PolicySpec::Temporal { interval_frames: *k })).collect(),
        (Sweep::Values(v), PolicyKind::Spatial) => v
            .iter()
            .map(|t| (*t, Some(a.rho), PolicySpec::Spatial { geodesic_threshold: *t, rho: a.rho }))
            .collect(),
        (Sweep::Values(v), _) => v
            .iter()
            .map(|m| (*m, None, PolicySpec::Oracle { min_overlap: *m, depth_source: depth_source.clone() }))
            .collect(),
    };
    let rows = specs
        .par_iter()
        .map(|(param, rho, spec)| Ok(selection_row(&session, *param, *rho, select_frames(&session, spec, overlap)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    output::write_csv(&a.out, &rows)?;
    if let Some(p) = &a.plot {
        let series = [
            Series { label: "selection ratio".into(), points: rows.iter().map(|r| (r.parameter, r.selection_ratio)).collect() },
            Series {
                label: "mean overlap".into(),
                points: rows.iter().filter_map(|r| r.mean_overlap.map(|m| (r.parameter, m))).collect(),
            },
        ];
        let title = format!("{} policy", rows.first().map_or("", |r| r.policy.as_str()));
        output::write_atomic(p, line_chart(&title, "parameter", "ratio", &series).as_bytes())?;
    }
    Ok(())
}
