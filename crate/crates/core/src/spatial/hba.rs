use std::collections::BTreeMap;

use crate::ba::{extract_planes, lm_solve, BAProblem, ExtractConfig, LmOptions};
use crate::geom::{pca_principal_axis, PointCloud, PoseKey, Se3};
use crate::graph::{optimize_graph, EdgeKind, GraphEdge, PoseGraph};
use crate::{CoreError, Result};

use super::SpatialWindow;

#[derive(Clone, Copy, Debug)]
pub struct HbaOptions {
    /// Poses per local window.
    pub window_size: usize,
    /// Offset between consecutive local windows; must be below
    /// `window_size` so windows overlap and share an anchor pose.
    pub stride: usize,
    pub extract: ExtractConfig,
    pub lm: LmOptions,
}

impl Default for HbaOptions {
    fn default() -> Self {
        HbaOptions {
            window_size: 10,
            stride: 5,
            extract: ExtractConfig::default(),
            lm: LmOptions::default(),
        }
    }
}

/// Orders the window members by projection onto the dominant axis of
/// their positions, so poses that are physical neighbours become index
/// neighbours regardless of which robot or how late they visited. The
/// axis sign is fixed to point from the first member toward the last;
/// projection ties break by key.
pub fn principal_order(
    members: &[PoseKey],
    poses: &BTreeMap<PoseKey, Se3>,
) -> Result<Vec<PoseKey>> {
    let positions: Vec<_> = members
        .iter()
        .map(|k| {
            poses
                .get(k)
                .map(|t| t.translation)
                .ok_or_else(|| {
                    CoreError::InvalidConfig(format!("window member {k} has no pose estimate"))
                })
        })
        .collect::<Result<_>>()?;
    let (mut axis, _) = pca_principal_axis(&positions)?;
    let span = positions[positions.len() - 1] - positions[0];
    if span.dot(&axis) < 0.0 {
        axis = -axis;
    }
    let mut order: Vec<(f64, PoseKey)> = members
        .iter()
        .zip(&positions)
        .map(|(k, p)| (p.dot(&axis), *k))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(order.into_iter().map(|(_, k)| k).collect())
}

/// Hierarchical refinement of one elongated window: members are ordered
/// along their principal axis, solved in overlapping local windows (first
/// pose of each window gauge-fixed), and the window anchors are then
/// reconciled by a small chain optimization whose measurements are the
/// anchor-to-anchor relative poses from the local solves. Windows run
/// sequentially on the freshest estimates; in the overlaps the later
/// window's result wins. Fewer members than one window collapse to a
/// single joint solve.
pub fn spatial_hba(
    window: &SpatialWindow,
    poses: &BTreeMap<PoseKey, Se3>,
    scans: &BTreeMap<PoseKey, PointCloud>,
    opts: &HbaOptions,
) -> Result<BTreeMap<PoseKey, Se3>> {
    if opts.window_size < 2 || opts.stride == 0 || opts.stride >= opts.window_size {
        return Err(CoreError::InvalidConfig(format!(
            "local windows of {} poses with stride {} cannot overlap",
            opts.window_size, opts.stride
        )));
    }
    for key in &window.members {
        if !scans.contains_key(key) {
            return Err(CoreError::InvalidConfig(format!("window member {key} has no scan")));
        }
    }
    let ordered = principal_order(&window.members, poses)?;
    let n = ordered.len();
    let mut current: BTreeMap<PoseKey, Se3> =
        ordered.iter().map(|k| (*k, poses[k])).collect();

    let solve_span = |keys: &[PoseKey],
                      current: &BTreeMap<PoseKey, Se3>|
     -> Result<Vec<Se3>> {
        let span_poses: Vec<Se3> = keys.iter().map(|k| current[k]).collect();
        let clouds: Vec<PointCloud> = keys.iter().map(|k| scans[k].clone()).collect();
        let features = extract_planes(&clouds, &span_poses, &opts.extract)?;
        let problem = BAProblem::new(span_poses, features, vec![false; keys.len()], true)?;
        Ok(lm_solve(&problem, &opts.lm)?.poses)
    };

    if n < opts.window_size {
        let solved = solve_span(&ordered, &current)?;
        for (k, t) in ordered.iter().zip(solved) {
            current.insert(*k, t);
        }
        return Ok(current);
    }

    let mut starts = Vec::new();
    let mut s = 0;
    loop {
        if s + opts.window_size >= n {
            starts.push(n - opts.window_size);
            break;
        }
        starts.push(s);
        s += opts.stride;
    }
    starts.dedup();

    // Local pass: each window is solved in its own gauge (first pose
    // fixed); keep the poses relative to that anchor.
    let mut anchors = Vec::with_capacity(starts.len());
    let mut relatives: Vec<Vec<Se3>> = Vec::with_capacity(starts.len());
    for &start in &starts {
        let keys = &ordered[start..start + opts.window_size];
        let solved = solve_span(keys, &current)?;
        let anchor = solved[0];
        relatives.push(solved.iter().map(|t| anchor.delta_to(t)).collect());
        anchors.push(anchor);
        for (k, t) in keys.iter().zip(&solved) {
            current.insert(*k, *t);
        }
    }

    if starts.len() > 1 {
        // Top pass: reconcile the anchors. Consecutive windows overlap, so
        // window k holds a refined estimate of window k+1's anchor pose;
        // that relative pose is the chain measurement.
        let mut nodes = BTreeMap::new();
        let mut edges = Vec::new();
        for (k, anchor) in anchors.iter().enumerate() {
            nodes.insert(PoseKey::new(0, k as u32), *anchor);
        }
        for k in 0..starts.len() - 1 {
            let offset = starts[k + 1] - starts[k];
            let measurement = relatives[k][offset];
            edges.push(GraphEdge::weighted(
                EdgeKind::Odometry,
                PoseKey::new(0, k as u32),
                PoseKey::new(0, k as u32 + 1),
                measurement,
                1.0,
            )?);
        }
        let graph = PoseGraph { nodes, edges, anchor: PoseKey::new(0, 0) };
        let top = optimize_graph(&graph, opts.lm.max_iter, opts.lm.tol)?;
        for (k, anchor) in top.poses.values().enumerate() {
            anchors[k] = *anchor;
        }
    }

    // Write-back: every window places its poses off its reconciled
    // anchor; overlaps take the later window's value.
    for (w, &start) in starts.iter().enumerate() {
        for (i, rel) in relatives[w].iter().enumerate() {
            current.insert(ordered[start + i], anchors[w].compose(rel));
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ba::plane_cost;
    use crate::geom::{Frame, Twist};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn key_line(robot: u32, xs: &[f64]) -> BTreeMap<PoseKey, Se3> {
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                (
                    PoseKey::new(robot, i as u32),
                    Se3::exp(&Twist::new(0.0, 0.0, 0.0, x, 0.0, 0.0)),
                )
            })
            .collect()
    }

    #[test]
    fn x_aligned_members_keep_their_order() {
        let poses = key_line(0, &[0.0, 1.0, 2.5, 3.0, 4.2]);
        let members: Vec<PoseKey> = poses.keys().copied().collect();
        let order = principal_order(&members, &poses).unwrap();
        assert_eq!(order, members);
    }

    #[test]
    fn interleaved_robots_sort_by_corridor_coordinate() {
        let mut poses = key_line(0, &[0.0, 2.0, 4.0, 6.0]);
        for (k, t) in key_line(1, &[1.0, 3.0, 5.0, 7.0]) {
            poses.insert(k, t);
        }
        let members: Vec<PoseKey> = poses.keys().copied().collect();
        let order = principal_order(&members, &poses).unwrap();
        let xs: Vec<f64> = order.iter().map(|k| poses[k].translation.x).collect();
        assert!(xs.windows(2).all(|w| w[0] < w[1]), "not sorted along the corridor: {xs:?}");
        let robots: Vec<u32> = order.iter().map(|k| k.robot).collect();
        assert_eq!(robots, vec![0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn axis_sign_follows_the_trajectory_direction() {
        // Members laid out toward -x: first-to-last span keeps the
        // projection aligned with traversal order.
        let poses = key_line(0, &[0.0, -1.0, -2.0, -3.0]);
        let members: Vec<PoseKey> = poses.keys().copied().collect();
        let order = principal_order(&members, &poses).unwrap();
        assert_eq!(order, members);
    }

    /// Corridor world: floor plus two side walls spanning x in [-2, len+2].
    fn corridor_points(rng: &mut ChaCha8Rng, len: f64, n: usize) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for _ in 0..n {
            let x = rng.gen_range(-2.0..len + 2.0);
            let y = rng.gen_range(-3.0..3.0);
            let z = rng.gen_range(0.0..2.5);
            pts.push(Vector3::new(x, y, 0.0));
            pts.push(Vector3::new(x, -3.0, z));
            pts.push(Vector3::new(x, 3.0, z));
        }
        pts
    }

    fn corridor_scene(
        seed: u64,
        n_poses: u32,
    ) -> (BTreeMap<PoseKey, Se3>, BTreeMap<PoseKey, PointCloud>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world = corridor_points(&mut rng, n_poses as f64, 260);
        let mut gt = BTreeMap::new();
        let mut scans = BTreeMap::new();
        for i in 0..n_poses {
            let key = PoseKey::new(i % 2, i / 2);
            let pose = Se3::exp(&Twist::new(
                0.0,
                0.0,
                0.02 * (i % 5) as f64,
                i as f64,
                0.2 * (i % 2) as f64,
                1.2,
            ));
            let scan = PointCloud {
                points: world.iter().map(|p| pose.inverse().transform_point(p)).collect(),
                frame: Frame::Sensor,
                covariances: None,
            };
            gt.insert(key, pose);
            scans.insert(key, scan);
        }
        (gt, scans)
    }

    fn window_over(poses: &BTreeMap<PoseKey, Se3>) -> SpatialWindow {
        SpatialWindow {
            id: 0,
            center: Vector3::zeros(),
            radius: 1e3,
            members: poses.keys().copied().collect(),
        }
    }

    fn test_opts() -> HbaOptions {
        HbaOptions {
            window_size: 10,
            stride: 5,
            extract: ExtractConfig {
                voxel: 2.0,
                min_leaf_points: 20,
                min_views: 2,
                ..Default::default()
            },
            lm: LmOptions { max_iter: 15, ..Default::default() },
        }
    }

    #[test]
    fn small_window_falls_back_to_the_joint_solve() {
        let (gt, scans) = corridor_scene(70, 6);
        let mut poses = gt.clone();
        for (i, t) in poses.values_mut().enumerate() {
            let s = 0.008 * (i as f64 - 2.0);
            *t = t.compose(&Se3::exp(&Twist::new(s, -s, 0.0, 3.0 * s, 0.0, 2.0 * s)));
        }
        let window = window_over(&poses);
        let opts = test_opts();
        let out = spatial_hba(&window, &poses, &scans, &opts).unwrap();

        let order = principal_order(&window.members, &poses).unwrap();
        let joint_poses: Vec<Se3> = order.iter().map(|k| poses[k]).collect();
        let clouds: Vec<PointCloud> = order.iter().map(|k| scans[k].clone()).collect();
        let features = extract_planes(&clouds, &joint_poses, &opts.extract).unwrap();
        let problem =
            BAProblem::new(joint_poses, features, vec![false; order.len()], true).unwrap();
        let joint = lm_solve(&problem, &opts.lm).unwrap();
        for (k, want) in order.iter().zip(&joint.poses) {
            assert_eq!(out[k], *want, "pose {k} differs from the joint solve");
        }
    }

    #[test]
    fn corridor_refinement_reduces_plane_cost() {
        let (gt, scans) = corridor_scene(71, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let mut poses = gt.clone();
        for t in poses.values_mut() {
            let xi = Twist::from_fn(|i, _| {
                if i < 3 {
                    rng.gen_range(-0.01..0.01)
                } else {
                    rng.gen_range(-0.05..0.05)
                }
            });
            *t = t.compose(&Se3::exp(&xi));
        }
        let window = window_over(&poses);
        let opts = test_opts();
        let out = spatial_hba(&window, &poses, &scans, &opts).unwrap();
        assert_eq!(out.len(), 16);

        let measure = |estimates: &BTreeMap<PoseKey, Se3>| {
            let order: Vec<PoseKey> = estimates.keys().copied().collect();
            let p: Vec<Se3> = order.iter().map(|k| estimates[k]).collect();
            let clouds: Vec<PointCloud> = order.iter().map(|k| scans[k].clone()).collect();
            let features = extract_planes(&clouds, &p, &opts.extract).unwrap();
            plane_cost(&BAProblem::new(p, features, vec![false; order.len()], true).unwrap())
        };
        let before = measure(&poses);
        let after = measure(&out);
        assert!(
            after < 0.5 * before,
            "hierarchical pass should cut the plane cost: {before} -> {after}"
        );
    }

    #[test]
    fn overlapping_windows_cover_every_member() {
        let (gt, scans) = corridor_scene(73, 13);
        let mut poses = gt.clone();
        for t in poses.values_mut() {
            *t = t.compose(&Se3::exp(&Twist::new(0.002, 0.0, -0.002, 0.01, 0.01, 0.0)));
        }
        let window = window_over(&poses);
        let out = spatial_hba(&window, &poses, &scans, &test_opts()).unwrap();
        assert_eq!(
            out.keys().copied().collect::<Vec<_>>(),
            poses.keys().copied().collect::<Vec<_>>()
        );
        for t in out.values() {
            assert!(t.translation.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn degenerate_stride_is_rejected() {
        let (gt, scans) = corridor_scene(74, 6);
        let window = window_over(&gt);
        let mut opts = test_opts();
        opts.stride = opts.window_size;
        assert!(spatial_hba(&window, &gt, &scans, &opts).is_err());
    }
}
