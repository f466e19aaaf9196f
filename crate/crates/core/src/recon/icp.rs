use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::ReconError;
use crate::geometry::RelativeTransform;
use crate::metrics::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    pub max_correspondence_distance: f64,
    pub convergence_translation: f64,
    pub convergence_rotation: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_correspondence_distance: 0.1,
            convergence_translation: 1e-6,
            convergence_rotation: 1e-6,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<(), ReconError> {
        let ok = self.max_iterations > 0
            && self.max_correspondence_distance > 0.0
            && self.convergence_translation > 0.0
            && self.convergence_rotation > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ReconError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    /// Maps source points into the destination frame.
    pub transform: RelativeTransform,
    pub rmse: f64,
    pub iterations: usize,
    pub correspondences: usize,
    pub converged: bool,
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]` (reflection-corrected SVD).
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> RelativeTransform {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
    RelativeTransform::from_parts_unchecked(r, cd - r * cs)
}

fn correspond(
    src: &[Vector3<f64>],
    tree: &KdTree,
    dst: &[Vector3<f64>],
    t: &RelativeTransform,
    gate2: f64,
) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, f64) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut sq = 0.0;
    for p in src {
        let q = t.apply(p);
        if let Some((idx, d2)) = tree.nearest(&q) {
            if d2 <= gate2 {
                a.push(q);
                b.push(dst[idx]);
                sq += d2;
            }
        }
    }
    (a, b, sq)
}

/// Point-to-point ICP aligning `src` onto `dst`.
pub fn icp_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    init: &RelativeTransform,
    params: &IcpParams,
) -> Result<IcpResult, ReconError> {
    params.validate()?;
    let tree = KdTree::new(dst);
    let gate2 = params.max_correspondence_distance * params.max_correspondence_distance;
    let mut current = *init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iterations {
        iterations += 1;
        let (a, b, _) = correspond(src, &tree, tree.points(), &current, gate2);
        if a.len() < 3 {
            return Err(ReconError::Degenerate { iteration: iterations, correspondences: a.len() });
        }
        let delta = kabsch(&a, &b);
        current = current.then(&delta);
        if delta.translation().norm() < params.convergence_translation && delta.angle() < params.convergence_rotation {
            converged = true;
            break;
        }
    }
    let (a, _, sq) = correspond(src, &tree, tree.points(), &current, gate2);
    if a.len() < 3 {
        return Err(ReconError::Degenerate { iteration: iterations, correspondences: a.len() });
    }
    Ok(IcpResult {
        transform: current,
        rmse: (sq / a.len() as f64).sqrt(),
        iterations,
        correspondences: a.len(),
        converged,
    })
}
