use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{skew, PointCloud, PoseKey, Se3, SpatialIndex};

/// Correspondence gate for the constraint-strength measurement.
const CORR_DIST: f64 = 0.5;
/// Below this many correspondences the pair is declared unconstrained
/// rather than measured.
const MIN_CORR: usize = 10;

#[derive(Clone, Copy, Debug)]
pub struct SparsifyParams {
    /// Smallest eigenvalue a same-robot pair must reach to be retained
    /// under the default (well-constrained) rule.
    pub lambda_thresh: f64,
    /// Descriptor-similarity floor for cross-robot pairs.
    pub sim_thresh: f64,
    /// Audit switch: retain same-robot pairs with λ_min BELOW the
    /// threshold instead of above it.
    pub literal_lambda_rule: bool,
    /// Voxel size of the overlap-ratio descriptor stand-in.
    pub voxel: f64,
}

impl Default for SparsifyParams {
    fn default() -> Self {
        SparsifyParams {
            lambda_thresh: 1.0,
            sim_thresh: 0.3,
            literal_lambda_rule: false,
            voxel: 0.5,
        }
    }
}

/// One pose pair's measurements and the retention decision.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SparsificationVerdict {
    pub a: PoseKey,
    pub b: PoseKey,
    pub lambda_min: f64,
    /// In [0, 1]; submap voxel-overlap ratio unless the caller supplied
    /// its own descriptor similarities.
    pub descriptor_sim: f64,
    pub retained: bool,
}

/// Information matrix of the point-to-point registration residual between
/// two scans at a fixed relative pose, and its smallest eigenvalue. Each
/// correspondence contributes through the block-diagonal Jacobian
/// [[−[P]ₓ, 0], [0, I]] taken at the matched model point, so Ω is
/// symmetric PSD by construction. Pairs with fewer than 10 matches within
/// 0.5 m are unconstrained: (0, 0.0).
pub fn registration_covariance(
    cloud_a: &PointCloud,
    cloud_b: &PointCloud,
    t_ab: &Se3,
) -> (Matrix6<f64>, f64) {
    if cloud_a.is_empty() || cloud_b.is_empty() {
        return (Matrix6::zeros(), 0.0);
    }
    let tree = SpatialIndex::from_points(&cloud_a.points);
    let mut omega = Matrix6::zeros();
    let mut rot_block = nalgebra::Matrix3::<f64>::zeros();
    let mut matches = 0usize;
    for p in &cloud_b.points {
        let q = t_ab.transform_point(p);
        let Some((id, dist)) = tree.nearest(&q) else { continue };
        if dist > CORR_DIST {
            continue;
        }
        let model = cloud_a.points[id as usize];
        let sk = skew(&model);
        rot_block += sk.transpose() * sk;
        matches += 1;
    }
    if matches < MIN_CORR {
        return (Matrix6::zeros(), 0.0);
    }
    omega.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot_block);
    let eye = nalgebra::Matrix3::<f64>::identity() * matches as f64;
    omega.fixed_view_mut::<3, 3>(3, 3).copy_from(&eye);
    let lambda_min = omega
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v));
    (omega, lambda_min)
}

fn voxel_keys(points: impl Iterator<Item = Vector3<f64>>, voxel: f64) -> BTreeSet<(i64, i64, i64)> {
    points
        .map(|p| {
            (
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            )
        })
        .collect()
}

/// Fraction of the smaller submap's occupied voxels also occupied by the
/// other submap, both in the shared frame.
fn voxel_overlap(a: &BTreeSet<(i64, i64, i64)>, b: &BTreeSet<(i64, i64, i64)>, _voxel: f64) -> f64 {
    let denom = a.len().min(b.len());
    if denom == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / denom as f64
}

/// Decides which pose pairs of an optimized window become second-pass
/// constraints. Cross-robot pairs are kept on descriptor similarity (place
/// recognition works across sessions); same-robot pairs are kept when the
/// pairwise registration is well constrained in every direction, measured
/// by λ_min of the registration information. Every pair gets a verdict so
/// the decision is auditable.
pub fn sparsify_ba_constraints(
    window: &[(PoseKey, Se3, &PointCloud)],
    sim_scores: Option<&BTreeMap<(PoseKey, PoseKey), f64>>,
    params: &SparsifyParams,
) -> Vec<SparsificationVerdict> {
    let keys: Vec<BTreeSet<(i64, i64, i64)>> = window
        .iter()
        .map(|(_, pose, cloud)| {
            voxel_keys(cloud.points.iter().map(|p| pose.transform_point(p)), params.voxel)
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..window.len() {
        for j in i + 1..window.len() {
            let (ka, pa, ca) = &window[i];
            let (kb, pb, cb) = &window[j];
            let (_, lambda_min) = registration_covariance(ca, cb, &pa.delta_to(pb));
            let descriptor_sim = sim_scores
                .and_then(|m| m.get(&(*ka, *kb)).or_else(|| m.get(&(*kb, *ka))))
                .copied()
                .unwrap_or_else(|| voxel_overlap(&keys[i], &keys[j], params.voxel))
                .clamp(0.0, 1.0);
            let retained = if ka.robot != kb.robot {
                descriptor_sim >= params.sim_thresh
            } else if params.literal_lambda_rule {
                lambda_min < params.lambda_thresh
            } else {
                lambda_min >= params.lambda_thresh
            };
            out.push(SparsificationVerdict {
                a: *ka,
                b: *kb,
                lambda_min,
                descriptor_sim,
                retained,
            });
        }
    }
    out
}
