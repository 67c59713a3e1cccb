use std::collections::BTreeMap;

use crate::geom::{Frame, PointCloud, PoseKey, Se3};
use crate::loops::gicp_align;
use crate::{CoreError, Result};

use super::SpatialWindow;

/// Voxel size for the per-robot window submaps fed to the rigid
/// registration; thins dense scans without starving the surface-normal
/// neighbourhoods.
const SUBMAP_VOXEL: f64 = 0.3;
const ALIGN_MAX_ITER: usize = 40;
const ALIGN_TOL: f64 = 1e-5;

/// Per-robot rigid corrections applied before the window refinement.
#[derive(Clone, Debug)]
pub struct PrealignOutcome {
    /// Correction per robot present in the window; identity for the
    /// reference robot and for robots whose registration did not converge.
    pub corrections: BTreeMap<u32, Se3>,
    /// Window member poses with the corrections applied.
    pub poses: BTreeMap<PoseKey, Se3>,
    pub warnings: Vec<String>,
}

/// Rigidly registers each robot's window submap onto the lowest-id robot's
/// submap and applies the resulting whole-cluster correction to that
/// robot's poses. Layered walls from inter-session drift collapse to a
/// rough overlay that the finer per-pose refinement can then absorb. A
/// robot whose registration fails keeps its poses and is reported in
/// `warnings`.
pub fn prealign_clusters(
    window: &SpatialWindow,
    poses: &BTreeMap<PoseKey, Se3>,
    scans: &BTreeMap<PoseKey, PointCloud>,
) -> Result<PrealignOutcome> {
    let mut by_robot: BTreeMap<u32, Vec<PoseKey>> = BTreeMap::new();
    for key in &window.members {
        if !poses.contains_key(key) {
            return Err(CoreError::InvalidConfig(format!(
                "window member {key} has no pose estimate"
            )));
        }
        if !scans.contains_key(key) {
            return Err(CoreError::InvalidConfig(format!("window member {key} has no scan")));
        }
        by_robot.entry(key.robot).or_default().push(*key);
    }
    if by_robot.is_empty() {
        return Err(CoreError::EmptyInput("window members"));
    }

    let mut corrections: BTreeMap<u32, Se3> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut out_poses: BTreeMap<PoseKey, Se3> = BTreeMap::new();

    let reference = *by_robot.keys().next().unwrap();
    corrections.insert(reference, Se3::identity());
    for key in &by_robot[&reference] {
        out_poses.insert(*key, poses[key]);
    }
    if by_robot.len() == 1 {
        return Ok(PrealignOutcome { corrections, poses: out_poses, warnings });
    }

    let ref_submap = robot_submap(&by_robot[&reference], poses, scans);
    for (&robot, keys) in by_robot.iter().filter(|(r, _)| **r != reference) {
        let submap = robot_submap(keys, poses, scans);
        let correction = match gicp_align(
            &submap,
            &ref_submap,
            &Se3::identity(),
            ALIGN_MAX_ITER,
            ALIGN_TOL,
        ) {
            Ok(res) if res.converged => res.transform,
            Ok(res) => {
                warnings.push(format!(
                    "window {}: registration for robot {robot} stopped without converging \
                     (fitness {:.3}); robot left unadjusted",
                    window.id, res.fitness
                ));
                Se3::identity()
            }
            Err(e) => {
                warnings.push(format!(
                    "window {}: registration for robot {robot} failed ({e}); robot left \
                     unadjusted",
                    window.id
                ));
                Se3::identity()
            }
        };
        corrections.insert(robot, correction);
        for key in keys {
            out_poses.insert(*key, correction.compose(&poses[key]));
        }
    }
    Ok(PrealignOutcome { corrections, poses: out_poses, warnings })
}

/// World-frame union of one robot's window scans, voxel-thinned.
fn robot_submap(
    keys: &[PoseKey],
    poses: &BTreeMap<PoseKey, Se3>,
    scans: &BTreeMap<PoseKey, PointCloud>,
) -> PointCloud {
    let mut points = Vec::new();
    for key in keys {
        let pose = &poses[key];
        let scan = &scans[key];
        match scan.frame {
            Frame::Sensor => {
                points.extend(scan.points.iter().map(|p| pose.transform_point(p)));
            }
            Frame::World => points.extend(scan.points.iter().copied()),
        }
    }
    PointCloud { points, frame: Frame::World, covariances: None }.voxel_downsample(SUBMAP_VOXEL)
}
