use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::geom::{PoseKey, Se3};
use crate::loops::{recall_loops, LoopClosure, LoopStatus};
use crate::{CoreError, Result};

use super::{optimize_graph, EdgeKind, GraphEdge, PoseGraph, SparsificationVerdict};

/// Recall passes are capped; each pass re-optimizes the full graph so the
/// fixed point is reached quickly in practice.
const MAX_RECALL_PASSES: usize = 10;

fn qualifying(lc: &LoopClosure) -> bool {
    matches!(lc.status, LoopStatus::Accepted | LoopStatus::Recalled)
}

fn check_endpoints(odometry: &[Vec<Se3>], lc: &LoopClosure) -> Result<()> {
    for k in [lc.key_a(), lc.key_b()] {
        let ok = (k.robot as usize) < odometry.len()
            && (k.seq as usize) < odometry[k.robot as usize].len();
        if !ok {
            return Err(CoreError::InvalidConfig(format!(
                "loop endpoint {k} is outside the trajectories"
            )));
        }
    }
    Ok(())
}

/// World-frame placement of every robot's odometry frame, chained through
/// inter-robot loop transforms by BFS from robot 0. Sessions start with no
/// relative pose information, so any robot without a loop path to robot 0
/// cannot be placed.
fn robot_frames(odometry: &[Vec<Se3>], loops: &[LoopClosure]) -> Result<Vec<Se3>> {
    let n = odometry.len();
    let mut frames = vec![None::<Se3>; n];
    frames[0] = Some(Se3::identity());
    let mut queue = VecDeque::from([0usize]);
    while let Some(r) = queue.pop_front() {
        let c_r = frames[r].unwrap();
        for lc in loops.iter().filter(|l| qualifying(l) && l.is_inter_robot()) {
            let (ka, kb) = (lc.key_a(), lc.key_b());
            // Orient the measured transform so it leads out of robot r.
            let (from, to, t) = if ka.robot as usize == r {
                (ka, kb, lc.transform)
            } else if kb.robot as usize == r {
                (kb, ka, lc.transform.inverse())
            } else {
                continue;
            };
            if frames[to.robot as usize].is_some() {
                continue;
            }
            let pose_from = odometry[from.robot as usize][from.seq as usize];
            let pose_to = odometry[to.robot as usize][to.seq as usize];
            frames[to.robot as usize] = Some(c_r.compose(&pose_from).compose(&t).compose(&pose_to.inverse()));
            queue.push_back(to.robot as usize);
        }
    }
    frames
        .iter()
        .enumerate()
        .map(|(r, f)| f.ok_or(CoreError::DisconnectedGraph { robot: r as u32 }))
        .collect()
}

/// Assembles the first-pass graph: per-robot odometry chains plus every
/// accepted or recalled loop, all with unit information. The first pose of
/// robot 0 is the gauge anchor. Node estimates chain each robot's odometry
/// through the inter-robot loop transforms.
pub fn build_fpgo(odometry: &[Vec<Se3>], loops: &[LoopClosure]) -> Result<PoseGraph> {
    if odometry.is_empty() || odometry.iter().any(Vec::is_empty) {
        return Err(CoreError::EmptyInput("robot trajectory"));
    }
    let active: Vec<&LoopClosure> = loops.iter().filter(|l| qualifying(l)).collect();
    for lc in &active {
        check_endpoints(odometry, lc)?;
    }
    let frames = robot_frames(odometry, loops)?;

    let mut nodes = BTreeMap::new();
    let mut edges = Vec::new();
    for (r, traj) in odometry.iter().enumerate() {
        for (i, pose) in traj.iter().enumerate() {
            nodes.insert(PoseKey::new(r as u32, i as u32), frames[r].compose(pose));
        }
        for i in 0..traj.len().saturating_sub(1) {
            edges.push(GraphEdge::weighted(
                EdgeKind::Odometry,
                PoseKey::new(r as u32, i as u32),
                PoseKey::new(r as u32, i as u32 + 1),
                traj[i].delta_to(&traj[i + 1]),
                1.0,
            )?);
        }
    }
    for lc in &active {
        edges.push(GraphEdge::weighted(
            EdgeKind::Loop,
            lc.key_a(),
            lc.key_b(),
            lc.transform,
            1.0,
        )?);
    }
    let graph = PoseGraph { nodes, edges, anchor: PoseKey::new(0, 0) };
    graph.validate()?;
    Ok(graph)
}

#[derive(Clone, Debug)]
pub struct RecallOutcome {
    pub poses: BTreeMap<PoseKey, Se3>,
    pub loops: Vec<LoopClosure>,
    /// Optimization passes run (at least 1).
    pub passes: usize,
    pub recalled_total: usize,
}

/// Alternates graph optimization with recall of rejected loops until no
/// loop changes status. The loop set only grows, so the iteration is
/// monotone; the pass cap guards against pathological flip-flopping that
/// monotonicity already rules out.
pub fn fpgo_with_recall(
    odometry: &[Vec<Se3>],
    mut loops: Vec<LoopClosure>,
    recall_dist: f64,
    max_iter: usize,
    tol: f64,
) -> Result<RecallOutcome> {
    let mut passes = 0;
    let mut recalled_total = 0;
    loop {
        passes += 1;
        let graph = build_fpgo(odometry, &loops)?;
        let report = optimize_graph(&graph, max_iter, tol)?;
        let poses = report.poses;
        if passes >= MAX_RECALL_PASSES {
            return Ok(RecallOutcome { poses, loops, passes, recalled_total });
        }
        let recalled = recall_loops(&mut loops, &poses, recall_dist)?;
        recalled_total += recalled;
        if recalled == 0 {
            return Ok(RecallOutcome { poses, loops, passes, recalled_total });
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LpgoWeights {
    /// Odometry edge between two poses no window optimized.
    pub w_low: f64,
    /// Odometry edge inside a window (both endpoints optimized).
    pub w_mid: f64,
    /// Odometry edge crossing a window boundary; stiff so the window's
    /// local correction does not tear the trajectory.
    pub w_high: f64,
    /// Retained window constraint.
    pub w_ba: f64,
}

impl Default for LpgoWeights {
    fn default() -> Self {
        LpgoWeights { w_low: 1.0, w_mid: 10.0, w_high: 100.0, w_ba: 100.0 }
    }
}

/// Second-pass graph: odometry chains weighted by how each edge relates to
/// the window-optimized pose set, plus the retained window constraints
/// carrying the refined relative poses. Loop edges are deliberately absent;
/// their information now lives in the window constraints.
pub fn build_lpgo(
    odometry: &[Vec<Se3>],
    fpgo_poses: &BTreeMap<PoseKey, Se3>,
    ba_poses: &BTreeMap<PoseKey, Se3>,
    verdicts: &[SparsificationVerdict],
    weights: &LpgoWeights,
) -> Result<PoseGraph> {
    if odometry.is_empty() || odometry.iter().any(Vec::is_empty) {
        return Err(CoreError::EmptyInput("robot trajectory"));
    }
    let mut nodes = BTreeMap::new();
    let mut edges = Vec::new();
    for (r, traj) in odometry.iter().enumerate() {
        for i in 0..traj.len() {
            let key = PoseKey::new(r as u32, i as u32);
            let init = ba_poses.get(&key).or_else(|| fpgo_poses.get(&key)).ok_or_else(|| {
                CoreError::InvalidConfig(format!("no initial estimate for {key}"))
            })?;
            nodes.insert(key, *init);
        }
        for i in 0..traj.len().saturating_sub(1) {
            let a = PoseKey::new(r as u32, i as u32);
            let b = PoseKey::new(r as u32, i as u32 + 1);
            let in_ba = (ba_poses.contains_key(&a), ba_poses.contains_key(&b));
            let w = match in_ba {
                (true, true) => weights.w_mid,
                (false, false) => weights.w_low,
                _ => weights.w_high,
            };
            edges.push(GraphEdge::weighted(
                EdgeKind::Odometry,
                a,
                b,
                traj[i].delta_to(&traj[i + 1]),
                w,
            )?);
        }
    }
    for v in verdicts.iter().filter(|v| v.retained) {
        let (ta, tb) = match (ba_poses.get(&v.a), ba_poses.get(&v.b)) {
            (Some(ta), Some(tb)) => (ta, tb),
            _ => {
                return Err(CoreError::InvalidConfig(format!(
                    "retained constraint {} ↔ {} references poses outside the optimized set",
                    v.a, v.b
                )))
            }
        };
        edges.push(GraphEdge::weighted(EdgeKind::Ba, v.a, v.b, ta.delta_to(tb), weights.w_ba)?);
    }

    // Robots are only tied together by cross-robot retained constraints
    // here; an untied robot would float freely.
    let n = odometry.len();
    let mut linked = BTreeSet::from([0u32]);
    let mut queue = VecDeque::from([0u32]);
    while let Some(r) = queue.pop_front() {
        for v in verdicts.iter().filter(|v| v.retained) {
            for (x, y) in [(v.a.robot, v.b.robot), (v.b.robot, v.a.robot)] {
                if x == r && linked.insert(y) {
                    queue.push_back(y);
                }
            }
        }
    }
    if let Some(orphan) = (0..n as u32).find(|r| !linked.contains(r)) {
        return Err(CoreError::DisconnectedGraph { robot: orphan });
    }

    let graph = PoseGraph { nodes, edges, anchor: PoseKey::new(0, 0) };
    graph.validate()?;
    Ok(graph)
}

#[derive(Clone, Debug)]
pub struct LpgoRun {
    pub poses: BTreeMap<PoseKey, Se3>,
    /// True when no usable window constraints existed and the first-pass
    /// poses were returned unchanged.
    pub used_fallback: bool,
    pub converged: bool,
}

/// Runs the second pass when it has something to add; without any retained
/// window constraint (or with a robot left untied by them) the second pass
/// could only degrade the first, so the first-pass poses stand.
pub fn run_lpgo(
    odometry: &[Vec<Se3>],
    fpgo_poses: &BTreeMap<PoseKey, Se3>,
    ba_poses: &BTreeMap<PoseKey, Se3>,
    verdicts: &[SparsificationVerdict],
    weights: &LpgoWeights,
    max_iter: usize,
    tol: f64,
) -> Result<LpgoRun> {
    let fallback = |poses: &BTreeMap<PoseKey, Se3>| LpgoRun {
        poses: poses.clone(),
        used_fallback: true,
        converged: true,
    };
    if !verdicts.iter().any(|v| v.retained) {
        return Ok(fallback(fpgo_poses));
    }
    let graph = match build_lpgo(odometry, fpgo_poses, ba_poses, verdicts, weights) {
        Ok(g) => g,
        Err(CoreError::DisconnectedGraph { .. }) => return Ok(fallback(fpgo_poses)),
        Err(e) => return Err(e),
    };
    let report = optimize_graph(&graph, max_iter, tol)?;
    Ok(LpgoRun { poses: report.poses, used_fallback: false, converged: report.converged })
}
