//! Point-to-point iterative closest point registration.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::transform::RigidTransform;
use crate::error::{Error, Result};
use crate::skeleton::Point3;

/// Relative spread below which a point set counts as collinear (or coincident).
const DEGENERACY_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Stop once the RMS improves by less than this many meters.
    pub tol: f64,
    /// Correspondences farther apart than this are ignored when fitting.
    /// `None` keeps every nearest-neighbour pair.
    pub max_correspondence_distance: Option<f64>,
}

impl Default for IcpParams {
    fn default() -> Self {
        IcpParams {
            max_iters: 100,
            tol: 1e-5,
            max_correspondence_distance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Nearest-neighbour RMS distance of the returned transform, meters.
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fails when `points` has fewer than three points or spans less than a plane.
pub fn check_spread(points: &[Point3]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::DegeneratePointSet);
    }
    let centroid = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let sv = cov.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= DEGENERACY_RATIO * s[0] {
        return Err(Error::DegeneratePointSet);
    }
    Ok(())
}

fn centroid(points: &[Point3]) -> Point3 {
    points.iter().fold(Point3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Closed-form least-squares rigid fit of paired points (SVD of the cross-covariance).
pub fn fit_rigid(source: &[Point3], target: &[Point3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::Shape(format!(
            "fit_rigid: {} source vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegeneratePointSet);
    }
    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or(Error::DegeneratePointSet)?;
    let v_t = svd.v_t.ok_or(Error::DegeneratePointSet)?;
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = ct - rotation * cs;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Registers `source` onto `target`, starting from `init`.
///
/// Each iteration pairs every transformed source point with its nearest
/// target point and refits the rigid transform in closed form. Iteration
/// stops when the RMS improves by less than `params.tol` or after
/// `params.max_iters` iterations; the lowest-RMS transform seen is returned.
pub fn icp_register(
    source: &[Point3],
    target: &[Point3],
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult> {
    check_spread(source)?;
    check_spread(target)?;

    let target_arr: Vec<[f64; 3]> = target.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&target_arr);
    let max_sq = params.max_correspondence_distance.map(|d| d * d);

    let mut current = *init;
    let mut best = IcpResult {
        transform: *init,
        rms: f64::INFINITY,
        iterations: 0,
        converged: false,
    };
    let mut prev_rms = f64::INFINITY;
    let mut src_pairs = Vec::with_capacity(source.len());
    let mut tgt_pairs = Vec::with_capacity(source.len());

    for iter in 1..=params.max_iters {
        src_pairs.clear();
        tgt_pairs.clear();
        let mut sq_sum = 0.0;
        for p in source {
            let q = current.apply(p);
            let nn = tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
            sq_sum += nn.distance;
            if max_sq.is_none_or(|m| nn.distance <= m) {
                src_pairs.push(*p);
                tgt_pairs.push(target[nn.item as usize]);
            }
        }
        let rms = (sq_sum / source.len() as f64).sqrt();
        if rms < best.rms {
            best.transform = current;
            best.rms = rms;
        }
        best.iterations = iter;
        if prev_rms - rms < params.tol {
            best.converged = true;
            break;
        }
        prev_rms = rms;
        if src_pairs.len() < 3 {
            break;
        }
        current = match fit_rigid(&src_pairs, &tgt_pairs) {
            Ok(t) => t,
            Err(_) => break,
        };
    }
    Ok(best)
}
