use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::geom::{PoseKey, Se3, SpatialIndex};
use crate::{CoreError, Result};

/// A window needs at least this many poses to set up a useful refinement.
pub const MIN_WINDOW_POSES: usize = 4;

/// Spherical neighbourhood of poses around a loop midpoint (or a cluster
/// centroid). Members are the poses whose positions fall inside the sphere
/// at construction time, in ascending key order.
#[derive(Clone, Debug)]
pub struct SpatialWindow {
    pub id: u64,
    pub center: Vector3<f64>,
    pub radius: f64,
    pub members: Vec<PoseKey>,
}

/// Collects every pose within `radius` of `center`. Member order is
/// ascending `PoseKey` regardless of the index layout, so windows are
/// reproducible across runs.
pub fn build_window(
    id: u64,
    center: Vector3<f64>,
    radius: f64,
    poses: &BTreeMap<PoseKey, Se3>,
) -> Result<SpatialWindow> {
    if radius <= 0.0 || !radius.is_finite() {
        return Err(CoreError::InvalidConfig(format!(
            "window radius must be positive and finite, got {radius}"
        )));
    }
    let keys: Vec<PoseKey> = poses.keys().copied().collect();
    let entries: Vec<(u64, Vector3<f64>)> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| (i as u64, poses[k].translation))
        .collect();
    let index = SpatialIndex::build(&entries);
    let mut members: Vec<PoseKey> =
        index.radius_search(&center, radius).into_iter().map(|i| keys[i as usize]).collect();
    members.sort_unstable();
    if members.len() < MIN_WINDOW_POSES {
        return Err(CoreError::WindowTooSparse {
            have: members.len(),
            need: MIN_WINDOW_POSES,
            radius,
        });
    }
    Ok(SpatialWindow { id, center, radius, members })
}

/// Inside-out group schedule for one window: group 0 is the innermost
/// shell, later groups widen the optimized set. Radii are the outer edges
/// of the retained shells; groups partition the window members.
#[derive(Clone, Debug)]
pub struct DiffusionPlan {
    pub radii: Vec<f64>,
    pub groups: Vec<Vec<PoseKey>>,
}

impl DiffusionPlan {
    pub fn depth(&self) -> usize {
        self.groups.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }
}

/// Splits the window radius into `depth` equal-width shells and buckets
/// each member by its distance to the window center: shell k holds the
/// poses with distance in (k·w, (k+1)·w], except that shell 0 also takes
/// distance 0. Empty shells are dropped, so the effective depth can be
/// smaller than requested; the last retained radius is clamped to the
/// window radius.
pub fn plan_diffusion(
    window: &SpatialWindow,
    poses: &BTreeMap<PoseKey, Se3>,
    depth: usize,
) -> Result<DiffusionPlan> {
    if depth == 0 {
        return Err(CoreError::InvalidConfig("diffusion depth must be at least 1".into()));
    }
    let width = window.radius / depth as f64;
    let mut shells: Vec<Vec<PoseKey>> = vec![Vec::new(); depth];
    for key in &window.members {
        let pose = poses.get(key).ok_or_else(|| {
            CoreError::InvalidConfig(format!("window member {key} has no pose estimate"))
        })?;
        let dist = (pose.translation - window.center).norm();
        // ceil(d/w) - 1 maps (kw, (k+1)w] to shell k; distance 0 lands in
        // shell 0. Float round-off at exact boundaries is clamped into
        // range rather than rejected.
        let shell = if dist <= width {
            0
        } else {
            (((dist / width).ceil() as usize).saturating_sub(1)).min(depth - 1)
        };
        shells[shell].push(*key);
    }
    let mut radii = Vec::new();
    let mut groups = Vec::new();
    for (k, shell) in shells.into_iter().enumerate() {
        if shell.is_empty() {
            continue;
        }
        radii.push(((k + 1) as f64 * width).min(window.radius));
        groups.push(shell);
    }
    if let Some(last) = radii.last_mut() {
        *last = window.radius;
    }
    Ok(DiffusionPlan { radii, groups })
}
