use crate::geom::Se3;
use crate::{CoreError, Result};

use super::PointCluster;

/// One plane feature and its per-pose sensor-frame point clusters.
/// Plane parameters stay implicit: the cost solves for them in closed form
/// through the smallest scatter eigenvalue.
#[derive(Clone, Debug)]
pub struct FeatureAssociation {
    pub feature_id: u64,
    /// (pose index into the owning problem's pose list, sensor-frame cluster)
    pub observations: Vec<(usize, PointCluster)>,
}

impl FeatureAssociation {
    pub fn total_points(&self) -> usize {
        self.observations.iter().map(|(_, c)| c.n).sum()
    }
}

/// A bundle adjustment window: poses are the unknowns, features supply the
/// cost. Frozen poses keep their value and receive zero derivative rows;
/// the gauge flag additionally pins the first unfrozen pose so a fully
/// free window has no 6-dof null space.
#[derive(Clone, Debug)]
pub struct BAProblem {
    pub poses: Vec<Se3>,
    pub features: Vec<FeatureAssociation>,
    pub frozen: Vec<bool>,
    pub gauge_fix_first: bool,
}

impl BAProblem {
    pub fn new(
        poses: Vec<Se3>,
        features: Vec<FeatureAssociation>,
        frozen: Vec<bool>,
        gauge_fix_first: bool,
    ) -> Result<Self> {
        if frozen.len() != poses.len() {
            return Err(CoreError::LengthMismatch {
                context: "frozen mask",
                left: frozen.len(),
                right: poses.len(),
            });
        }
        if !gauge_fix_first && !frozen.iter().any(|f| *f) {
            return Err(CoreError::InvalidConfig(
                "bundle adjustment needs a frozen pose or the gauge flag; the cost is rigid-invariant".into(),
            ));
        }
        for f in &features {
            for (j, _) in &f.observations {
                if *j >= poses.len() {
                    return Err(CoreError::InvalidConfig(format!(
                        "feature {} references pose {} of {}",
                        f.feature_id,
                        j,
                        poses.len()
                    )));
                }
            }
        }
        Ok(BAProblem { poses, features, frozen, gauge_fix_first })
    }

    /// Pose indices that move during optimization: unfrozen, minus the
    /// gauge pose when the flag is set.
    pub fn active_indices(&self) -> Vec<usize> {
        let mut active: Vec<usize> =
            (0..self.poses.len()).filter(|i| !self.frozen[*i]).collect();
        if self.gauge_fix_first && !active.is_empty() {
            active.remove(0);
        }
        active
    }

    /// Indices with zeroed derivative rows: the frozen poses.
    pub fn frozen_indices(&self) -> Vec<usize> {
        (0..self.poses.len()).filter(|i| self.frozen[*i]).collect()
    }
}
