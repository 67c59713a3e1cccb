use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{umeyama_points, PointCloud, SpatialIndex};
use crate::loops::gicp::gicp_align;
use crate::loops::sor_filter;
use crate::loops::types::{LoopClosure, LoopStatus};
use crate::sim::derive_seed;
use crate::{CoreError, Result};

/// Knobs for the validation pipeline. Only the recall distance has an
/// authoritative value; the rest are tuned so clean candidates pass and
/// geometrically wrong ones never do.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopParams {
    pub sor_k: usize,
    pub sor_std_mult: f64,
    pub gicp_max_iter: usize,
    pub gicp_conv_tol: f64,
    pub ransac_iters: usize,
    pub ransac_dist_thresh: f64,
    /// Absolute inlier floor; shrinks to 10% of the smaller cloud when the
    /// clouds are too small for 100 inliers to be possible.
    pub min_inliers: usize,
    pub max_fitness: f64,
    /// Largest rotation (radians) the alignment may move away from the
    /// candidate transform. Candidate detectors propose poses to within a
    /// few degrees; a result that rotated far from the hypothesis answers
    /// a different question than the one asked.
    pub max_correction_rot: f64,
    /// Largest translation (meters) the alignment may move away from the
    /// candidate transform.
    pub max_correction_trans: f64,
    pub recall_dist: f64,
    pub seed: u64,
}

impl Default for LoopParams {
    fn default() -> Self {
        LoopParams {
            sor_k: 16,
            sor_std_mult: 1.0,
            gicp_max_iter: 50,
            gicp_conv_tol: 1e-6,
            ransac_iters: 200,
            ransac_dist_thresh: 0.3,
            min_inliers: 100,
            max_fitness: 0.5,
            max_correction_rot: 15.0_f64.to_radians(),
            max_correction_trans: 2.0,
            recall_dist: 2.0,
            seed: 0,
        }
    }
}

/// Best RANSAC inlier count over rigid fits to 3-point correspondence
/// samples. `pairs` holds (moved source point, matched destination point).
fn ransac_inliers(
    pairs: &[(Vector3<f64>, Vector3<f64>)],
    iters: usize,
    dist_thresh: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    if pairs.len() < 3 {
        return 0;
    }
    let mut best = 0usize;
    for _ in 0..iters {
        let mut idx = [0usize; 3];
        for slot in &mut idx {
            *slot = rng.gen_range(0..pairs.len());
        }
        if idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2] {
            continue;
        }
        let src: Vec<Vector3<f64>> = idx.iter().map(|&i| pairs[i].0).collect();
        let dst: Vec<Vector3<f64>> = idx.iter().map(|&i| pairs[i].1).collect();
        let Ok(fit) = umeyama_points(&src, &dst) else { continue };
        let count = pairs
            .iter()
            .filter(|(s, d)| (fit.transform_point(s) - d).norm() <= dist_thresh)
            .count();
        best = best.max(count);
    }
    best
}

fn reject(mut lc: LoopClosure, reason: &str) -> Result<LoopClosure> {
    lc.transition(LoopStatus::Rejected)?;
    lc.reject_reason = Some(reason.to_string());
    Ok(lc)
}

/// Runs denoise → align → correspondence-consensus on one raw candidate and
/// sets its status. On acceptance the candidate's transform is replaced by
/// the alignment estimate; fitness and inlier count are recorded either way.
pub fn validate_loop(
    lc: &LoopClosure,
    cloud_a: Option<&PointCloud>,
    cloud_b: Option<&PointCloud>,
    params: &LoopParams,
) -> Result<LoopClosure> {
    if lc.status != LoopStatus::Raw {
        return Err(CoreError::InvalidConfig(format!(
            "validate_loop expects a raw candidate, got {:?}",
            lc.status
        )));
    }
    let mut lc = lc.clone();
    let (Some(ca), Some(cb)) = (cloud_a, cloud_b) else {
        return reject(lc, "no data");
    };
    if ca.is_empty() || cb.is_empty() {
        return reject(lc, "no data");
    }
    let fa = sor_filter(ca, params.sor_k, params.sor_std_mult);
    let fb = sor_filter(cb, params.sor_k, params.sor_std_mult);
    let gicp = match gicp_align(&fb, &fa, &lc.transform, params.gicp_max_iter, params.gicp_conv_tol)
    {
        Ok(g) => g,
        Err(CoreError::DegeneratePointSet(_)) => return reject(lc, "too few points"),
        Err(e) => return Err(e),
    };
    lc.fitness = gicp.fitness.min(1e12);
    if !gicp.converged {
        return reject(lc, "alignment did not converge");
    }
    let correction = lc.transform.delta_to(&gicp.transform);
    if correction.rotation_angle() > params.max_correction_rot
        || correction.translation.norm() > params.max_correction_trans
    {
        return reject(lc, "alignment diverged from candidate");
    }
    // Final correspondence set under the alignment estimate, then a rigid
    // consensus vote over it.
    let index = SpatialIndex::from_points(&fa.points);
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = fb
        .points
        .iter()
        .filter_map(|p| {
            let moved = gicp.transform.transform_point(p);
            let (j, d) = index.nearest(&moved)?;
            (d <= params.ransac_dist_thresh * 3.0).then(|| (moved, fa.points[j as usize]))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        params.seed,
        ((lc.robot_a as u64) << 48)
            ^ ((lc.idx_a as u64) << 32)
            ^ ((lc.robot_b as u64) << 16)
            ^ lc.idx_b as u64,
    ));
    let inliers = ransac_inliers(&pairs, params.ransac_iters, params.ransac_dist_thresh, &mut rng);
    lc.inlier_count = inliers;
    let min_needed = effective_min_inliers(params.min_inliers, fa.len().min(fb.len()));
    if inliers < min_needed {
        return reject(lc, "too few inlier correspondences");
    }
    if gicp.fitness > params.max_fitness {
        return reject(lc, "fitness above threshold");
    }
    lc.transform = gicp.transform;
    lc.transition(LoopStatus::Accepted)?;
    Ok(lc)
}

/// 100 inliers cannot exist on clouds below 1000 points; fall back to 10%
/// of the smaller cloud there (never below 3, the rigid-fit minimum).
fn effective_min_inliers(configured: usize, min_cloud: usize) -> usize {
    configured.min((min_cloud as f64 * 0.1).ceil() as usize).max(3)
}
