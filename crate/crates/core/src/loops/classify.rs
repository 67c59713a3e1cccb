use std::collections::BTreeMap;
use std::collections::VecDeque;

use crate::geom::{PoseKey, Se3};
use crate::loops::types::{ClusterKind, LoopCluster, LoopClosure, LoopStatus};
use crate::{CoreError, Result};

/// Stamps each loop's spatial center as the midpoint of its two optimized
/// pose positions. Loops whose endpoints are missing from `poses` keep
/// their previous center.
pub fn set_centers(loops: &mut [LoopClosure], poses: &BTreeMap<PoseKey, Se3>) {
    for lc in loops {
        if let (Some(a), Some(b)) = (poses.get(&lc.key_a()), poses.get(&lc.key_b())) {
            lc.center = Some((a.translation + b.translation) * 0.5);
        }
    }
}

/// Groups accepted loops by BFS region growing over their centers: a loop
/// joins a cluster when it lies within `radius` of any member. Returns the
/// clusters (ids ascending by smallest member index) and stamps cluster_id
/// on each loop.
pub fn classify_loops(accepted: &mut [LoopClosure], radius: f64) -> Result<Vec<LoopCluster>> {
    if radius <= 0.0 {
        return Err(CoreError::InvalidConfig("cluster radius must be positive".into()));
    }
    let centers: Vec<_> = accepted
        .iter()
        .enumerate()
        .map(|(i, lc)| {
            lc.center.ok_or_else(|| {
                CoreError::InvalidConfig(format!(
                    "loop {i} ({} ↔ {}) has no center; set centers after pose estimation",
                    lc.key_a(),
                    lc.key_b()
                ))
            })
        })
        .collect::<Result<_>>()?;
    let mut cluster_of = vec![usize::MAX; accepted.len()];
    let mut clusters: Vec<LoopCluster> = Vec::new();
    for start in 0..accepted.len() {
        if cluster_of[start] != usize::MAX {
            continue;
        }
        let id = clusters.len() as u64;
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        cluster_of[start] = clusters.len();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            for j in 0..accepted.len() {
                if cluster_of[j] == usize::MAX
                    && (centers[i] - centers[j]).norm() <= radius
                {
                    cluster_of[j] = clusters.len();
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        let kind = if members.len() == 1 { ClusterKind::Isolated } else { ClusterKind::Clustered };
        clusters.push(LoopCluster { id, members, kind });
    }
    for (i, lc) in accepted.iter_mut().enumerate() {
        lc.cluster_id = Some(cluster_of[i] as u64);
    }
    Ok(clusters)
}

/// Re-admits rejected loops that the optimized poses now support: when the
/// position predicted for endpoint b by the loop's measured transform lands
/// within `dist_thresh` of b's optimized position, the rejection was
/// drift-induced rather than geometric.
pub fn recall_loops(
    loops: &mut [LoopClosure],
    poses: &BTreeMap<PoseKey, Se3>,
    dist_thresh: f64,
) -> Result<usize> {
    let mut recalled = 0;
    for lc in loops.iter_mut() {
        if lc.status != LoopStatus::Rejected {
            continue;
        }
        let (Some(a), Some(b)) = (poses.get(&lc.key_a()), poses.get(&lc.key_b())) else {
            continue;
        };
        let predicted_b = a.compose(&lc.transform);
        if (predicted_b.translation - b.translation).norm() < dist_thresh {
            lc.transition(LoopStatus::Recalled)?;
            recalled += 1;
        }
    }
    Ok(recalled)
}
