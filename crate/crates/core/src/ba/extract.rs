use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::geom::{Frame, PointCloud, Se3};
use crate::{CoreError, Result};

use super::{cluster_coordinate, FeatureAssociation};

#[derive(Clone, Copy, Debug)]
pub struct ExtractConfig {
    /// Root voxel edge length in meters.
    pub voxel: f64,
    /// A leaf is planar iff λ3/λ1 of its world-frame covariance is below
    /// this.
    pub planarity_thresh: f64,
    /// Minimum points for a leaf to become a feature (or to keep
    /// splitting).
    pub min_leaf_points: usize,
    /// A pose contributes an observation only with at least this many
    /// points in the leaf.
    pub min_points_per_view: usize,
    /// Maximum octree split depth below the root voxel.
    pub max_split_levels: usize,
    /// Features seen from fewer poses than this are dropped.
    pub min_views: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            voxel: 1.0,
            planarity_thresh: 0.01,
            min_leaf_points: 30,
            min_points_per_view: 5,
            max_split_levels: 3,
            min_views: 1,
        }
    }
}

/// One point tagged with its source pose, in both frames.
#[derive(Clone, Copy)]
struct Tagged {
    pose: usize,
    sensor: Vector3<f64>,
    world: Vector3<f64>,
}

/// Adaptive voxel plane extraction. `clouds[j]` is pose j's scan; world
/// positions come from `poses[j]` (clouds may be in either frame). Points
/// are hashed into root voxels of edge `cfg.voxel`, and each voxel splits
/// octree-style up to `max_split_levels` until a cell passes the planarity
/// test. Per-pose clusters are built from sensor-frame points, so they stay
/// valid as pose estimates move.
pub fn extract_planes(
    clouds: &[PointCloud],
    poses: &[Se3],
    cfg: &ExtractConfig,
) -> Result<Vec<FeatureAssociation>> {
    if clouds.len() != poses.len() {
        return Err(CoreError::LengthMismatch {
            context: "extract_planes clouds vs poses",
            left: clouds.len(),
            right: poses.len(),
        });
    }
    if cfg.voxel <= 0.0 {
        return Err(CoreError::InvalidConfig("voxel size must be positive".into()));
    }

    let mut voxels: BTreeMap<(i64, i64, i64), Vec<Tagged>> = BTreeMap::new();
    for (j, cloud) in clouds.iter().enumerate() {
        let (to_world, to_sensor) = match cloud.frame {
            Frame::Sensor => (Some(poses[j]), None),
            Frame::World => (None, Some(poses[j].inverse())),
        };
        for p in &cloud.points {
            let (sensor, world) = match (to_world, to_sensor) {
                (Some(t), _) => (*p, t.transform_point(p)),
                (_, Some(t)) => (t.transform_point(p), *p),
                _ => unreachable!(),
            };
            let key = (
                (world.x / cfg.voxel).floor() as i64,
                (world.y / cfg.voxel).floor() as i64,
                (world.z / cfg.voxel).floor() as i64,
            );
            voxels.entry(key).or_default().push(Tagged { pose: j, sensor, world });
        }
    }

    let mut features = Vec::new();
    for (key, points) in voxels {
        let min = Vector3::new(
            key.0 as f64 * cfg.voxel,
            key.1 as f64 * cfg.voxel,
            key.2 as f64 * cfg.voxel,
        );
        split_cell(points, min, cfg.voxel, 0, cfg, &mut features);
    }
    Ok(features)
}

fn split_cell(
    points: Vec<Tagged>,
    min: Vector3<f64>,
    size: f64,
    level: usize,
    cfg: &ExtractConfig,
    out: &mut Vec<FeatureAssociation>,
) {
    if points.len() < cfg.min_leaf_points {
        return;
    }
    if let Some(true) = is_planar(&points, cfg.planarity_thresh) {
        emit_feature(&points, cfg, out);
        return;
    }
    if level >= cfg.max_split_levels {
        return;
    }
    let half = size * 0.5;
    let mut children: [Vec<Tagged>; 8] = Default::default();
    for t in points {
        let idx = usize::from(t.world.x >= min.x + half)
            | (usize::from(t.world.y >= min.y + half) << 1)
            | (usize::from(t.world.z >= min.z + half) << 2);
        children[idx].push(t);
    }
    for (idx, child) in children.into_iter().enumerate() {
        let offset = Vector3::new(
            if idx & 1 != 0 { half } else { 0.0 },
            if idx & 2 != 0 { half } else { 0.0 },
            if idx & 4 != 0 { half } else { 0.0 },
        );
        split_cell(child, min + offset, half, level + 1, cfg, out);
    }
}

/// None when the cell covariance is degenerate (coincident points).
fn is_planar(points: &[Tagged], thresh: f64) -> Option<bool> {
    let n = points.len() as f64;
    let mean = points.iter().map(|t| t.world).sum::<Vector3<f64>>() / n;
    let mut cov = nalgebra::Matrix3::zeros();
    for t in points {
        let d = t.world - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;
    let eig = cov.symmetric_eigenvalues();
    let l1 = eig.max();
    let l3 = eig.min().max(0.0);
    if l1 <= 1e-18 {
        return None;
    }
    Some(l3 / l1 < thresh)
}

fn emit_feature(points: &[Tagged], cfg: &ExtractConfig, out: &mut Vec<FeatureAssociation>) {
    let mut per_pose: BTreeMap<usize, Vec<Vector3<f64>>> = BTreeMap::new();
    for t in points {
        per_pose.entry(t.pose).or_default().push(t.sensor);
    }
    let observations: Vec<(usize, super::PointCluster)> = per_pose
        .into_iter()
        .filter(|(_, pts)| pts.len() >= cfg.min_points_per_view)
        .map(|(j, pts)| (j, cluster_coordinate(&pts)))
        .collect();
    if observations.len() < cfg.min_views.max(1) {
        return;
    }
    let total: usize = observations.iter().map(|(_, c)| c.n).sum();
    if total < cfg.min_leaf_points {
        return;
    }
    out.push(FeatureAssociation { feature_id: out.len() as u64, observations });
}
