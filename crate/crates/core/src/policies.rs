//! Sparse-sensing frame-selection policies and overlap analysis.

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Session};
use crate::geometry::se3_geodesic;
use crate::warp::{build_screen_space_mesh, warp_mesh, ScreenSpaceMesh, WarpError, DEFAULT_AREA_PERCENTILE};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MAX_PAIRS_PER_GAP: usize = 200;
pub const DEFAULT_MIN_OVERLAP: f64 = 0.8;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid policy parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicySpec {
    Temporal { interval_frames: usize },
    Spatial { geodesic_threshold: f64, rho: f64 },
    Oracle { min_overlap: f64, depth_source: String },
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Temporal { .. } => "temporal",
            PolicySpec::Spatial { .. } => "spatial",
            PolicySpec::Oracle { .. } => "oracle",
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let ok = match self {
            PolicySpec::Temporal { interval_frames } => *interval_frames >= 1,
            PolicySpec::Spatial { geodesic_threshold, rho } => {
                *geodesic_threshold > 0.0 && geodesic_threshold.is_finite() && *rho > 0.0 && rho.is_finite()
            }
            PolicySpec::Oracle { min_overlap, .. } => *min_overlap > 0.0 && *min_overlap <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(PolicyError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub policy: String,
    /// Positions of the selected frames within the session.
    pub selected_indices: Vec<usize>,
    pub selection_ratio: f64,
    /// Depth source used for the overlap columns.
    pub overlap_source: String,
    /// Overlap of each selected frame warped into the next selected pose.
    pub consecutive_overlaps: Vec<f64>,
    pub min_overlap: Option<f64>,
    pub mean_overlap: Option<f64>,
}

/// Overlap evaluator that caches the source mesh of the most recent frame.
struct OverlapProbe<'a> {
    session: &'a Session,
    source: &'a str,
    cached: Option<(usize, ScreenSpaceMesh)>,
}

impl<'a> OverlapProbe<'a> {
    fn new(session: &'a Session, source: &'a str) -> Self {
        Self { session, source, cached: None }
    }

    fn overlap(&mut self, from: usize, to: usize) -> Result<f64, PolicyError> {
        if self.cached.as_ref().map(|(i, _)| *i) != Some(from) {
            self.cached = Some((from, mesh_for(self.session, self.source, from)?));
        }
        let (_, mesh) = self.cached.as_ref().expect("cached above");
        let k = self.session.intrinsics();
        Ok(warp_mesh(mesh, &self.session.frame(from).pose, &self.session.frame(to).pose, k).overlap_ratio)
    }
}

fn mesh_for(session: &Session, source: &str, pos: usize) -> Result<ScreenSpaceMesh, PolicyError> {
    let f = session.frame(pos);
    Ok(build_screen_space_mesh(f.depth(source)?, &f.rgb, session.intrinsics(), DEFAULT_AREA_PERCENTILE)?)
}

/// Overlap ratio of frame `from` warped into the pose of frame `to`.
pub fn pair_overlap(session: &Session, source: &str, from: usize, to: usize) -> Result<f64, PolicyError> {
    OverlapProbe::new(session, source).overlap(from, to)
}

/// `gt` when every frame has it, otherwise the first depth source shared by all frames.
pub fn default_overlap_source(session: &Session) -> Option<String> {
    let common = session.common_depth_sources();
    if common.iter().any(|s| s == "gt") {
        Some("gt".to_string())
    } else {
        common.into_iter().next()
    }
}

fn oracle_scan(session: &Session, source: &str, min_overlap: f64) -> Result<Vec<usize>, PolicyError> {
    let n = session.len();
    let mut probe = OverlapProbe::new(session, source);
    let mut selected = vec![0];
    let mut i = 0;
    while i + 1 < n {
        let mut last_ok = i + 1;
        if probe.overlap(i, i + 1)? >= min_overlap {
            for j in i + 2..n {
                if probe.overlap(i, j)? >= min_overlap {
                    last_ok = j;
                } else {
                    break;
                }
            }
        }
        selected.push(last_ok);
        i = last_ok;
    }
    Ok(selected)
}

pub fn consecutive_overlaps(session: &Session, source: &str, selected: &[usize]) -> Result<Vec<f64>, PolicyError> {
    selected
        .par_windows(2)
        .map(|w| pair_overlap(session, source, w[0], w[1]))
        .collect()
}

/// Runs `policy` over the session. Overlap columns use `overlap_source`, defaulting to the oracle's
/// own source or [`default_overlap_source`].
pub fn select_frames(
    session: &Session,
    policy: &PolicySpec,
    overlap_source: Option<&str>,
) -> Result<SelectionReport, PolicyError> {
    policy.validate()?;
    let n = session.len();
    let selected: Vec<usize> = match policy {
        PolicySpec::Temporal { interval_frames } => (0..n).step_by(*interval_frames).collect(),
        PolicySpec::Spatial { geodesic_threshold, rho } => {
            let mut out = vec![0];
            for j in 1..n {
                let last = *out.last().expect("starts with frame 0");
                if se3_geodesic(&session.frame(last).pose, &session.frame(j).pose, *rho) >= *geodesic_threshold {
                    out.push(j);
                }
            }
            out
        }
        PolicySpec::Oracle { min_overlap, depth_source } => {
            session.frame(0).depth(depth_source)?;
            oracle_scan(session, depth_source, *min_overlap)?
        }
    };
    let source = match (overlap_source, policy) {
        (Some(s), _) => s.to_string(),
        (None, PolicySpec::Oracle { depth_source, .. }) => depth_source.clone(),
        (None, _) => default_overlap_source(session)
            .ok_or_else(|| PolicyError::InvalidParams("session has no depth source shared by all frames".into()))?,
    };
    let overlaps = consecutive_overlaps(session, &source, &selected)?;
    let (min_overlap, mean_overlap) = summarize(&overlaps);
    Ok(SelectionReport {
        policy: policy.name().to_string(),
        selection_ratio: selected.len() as f64 / n as f64,
        selected_indices: selected,
        overlap_source: source,
        consecutive_overlaps: overlaps,
        min_overlap,
        mean_overlap,
    })
}

fn summarize(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (Some(min), Some(values.iter().sum::<f64>() / values.len() as f64))
}

/// Linear-interpolation percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub gap: usize,
    pub pairs: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

impl GapStats {
    pub fn from_values(gap: usize, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(GapStats {
            gap,
            pairs: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            median: percentile(&sorted, 50.0),
            p10: percentile(&sorted, 10.0),
            p90: percentile(&sorted, 90.0),
        })
    }
}

/// Sorted start positions of up to `max_pairs` pairs `(i, i + gap)`, drawn without replacement.
pub fn sample_pairs(session_len: usize, gap: usize, max_pairs: usize, seed: u64) -> Vec<usize> {
    if gap >= session_len {
        return Vec::new();
    }
    let candidates = session_len - gap;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (gap as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut starts = sample(&mut rng, candidates, max_pairs.min(candidates)).into_vec();
    starts.sort_unstable();
    starts
}

/// Overlap statistics per frame gap; gaps not shorter than the session are skipped with a warning.
pub fn overlap_curve(
    session: &Session,
    gaps: &[usize],
    depth_source: &str,
    max_pairs_per_gap: usize,
    seed: u64,
) -> Result<Vec<GapStats>, PolicyError> {
    if gaps.iter().any(|g| *g == 0) || max_pairs_per_gap == 0 {
        return Err(PolicyError::InvalidParams("gaps and pair counts must be positive".into()));
    }
    session.frame(0).depth(depth_source)?;
    let mut rows = Vec::new();
    for &gap in gaps {
        if gap >= session.len() {
            warn!("gap {gap} skipped: session has {} frames", session.len());
            continue;
        }
        let starts = sample_pairs(session.len(), gap, max_pairs_per_gap, seed);
        let values = starts
            .par_iter()
            .map(|&i| pair_overlap(session, depth_source, i, i + gap))
            .collect::<Result<Vec<_>, _>>()?;
        rows.extend(GapStats::from_values(gap, &values));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicRow {
    pub threshold: f64,
    pub selected: usize,
    pub selection_ratio: f64,
    pub min_overlap: Option<f64>,
    pub mean_overlap: Option<f64>,
}

/// Spatial policy evaluated at each threshold (positive, ascending).
pub fn geodesic_curve(
    session: &Session,
    thresholds: &[f64],
    rho: f64,
    overlap_source: Option<&str>,
) -> Result<Vec<GeodesicRow>, PolicyError> {
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PolicyError::InvalidParams("thresholds must be strictly ascending".into()));
    }
    thresholds
        .iter()
        .map(|&t| {
            let r = select_frames(session, &PolicySpec::Spatial { geodesic_threshold: t, rho }, overlap_source)?;
            Ok(GeodesicRow {
                threshold: t,
                selected: r.selected_indices.len(),
                selection_ratio: r.selection_ratio,
                min_overlap: r.min_overlap,
                mean_overlap: r.mean_overlap,
            })
        })
        .collect()
}
