use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{PoseKey, Se3};
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopStatus {
    Raw,
    Accepted,
    Rejected,
    Recalled,
}

/// A loop closure between two poses, possibly across robots. Starts `raw`
/// from the candidate generator, then moves through validation
/// (raw→accepted / raw→rejected) and recall (rejected→recalled).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopClosure {
    pub robot_a: u32,
    pub idx_a: u32,
    pub robot_b: u32,
    pub idx_b: u32,
    /// Pose of frame b expressed in frame a.
    #[serde(with = "crate::io::se3_tuple")]
    pub transform: Se3,
    /// Ground-truth validity from the simulator; evaluation only, never
    /// read by the pipeline itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_valid: Option<bool>,
    /// Mean squared whitened residual of the final alignment (lower is
    /// better); 0 until validated.
    #[serde(default)]
    pub fitness: f64,
    #[serde(default)]
    pub inlier_count: usize,
    pub status: LoopStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<u64>,
    /// World-frame midpoint of the two poses; set once FPGO estimates
    /// exist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vector3<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

impl LoopClosure {
    pub fn raw(a: PoseKey, b: PoseKey, transform: Se3, gt_valid: Option<bool>) -> Result<Self> {
        if a == b {
            return Err(CoreError::InvalidConfig(format!(
                "loop closure endpoints coincide: {a}"
            )));
        }
        Ok(LoopClosure {
            robot_a: a.robot,
            idx_a: a.seq,
            robot_b: b.robot,
            idx_b: b.seq,
            transform,
            gt_valid,
            fitness: 0.0,
            inlier_count: 0,
            status: LoopStatus::Raw,
            cluster_id: None,
            center: None,
            reject_reason: None,
        })
    }

    pub fn key_a(&self) -> PoseKey {
        PoseKey::new(self.robot_a, self.idx_a)
    }

    pub fn key_b(&self) -> PoseKey {
        PoseKey::new(self.robot_b, self.idx_b)
    }

    pub fn is_inter_robot(&self) -> bool {
        self.robot_a != self.robot_b
    }

    /// Enforces the legal status transitions: raw→accepted, raw→rejected,
    /// rejected→recalled.
    pub fn transition(&mut self, to: LoopStatus) -> Result<()> {
        let ok = matches!(
            (self.status, to),
            (LoopStatus::Raw, LoopStatus::Accepted)
                | (LoopStatus::Raw, LoopStatus::Rejected)
                | (LoopStatus::Rejected, LoopStatus::Recalled)
        );
        if !ok {
            return Err(CoreError::InvalidConfig(format!(
                "illegal loop status transition {:?} → {to:?}",
                self.status
            )));
        }
        self.status = to;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterKind {
    Isolated,
    Clustered,
}

/// A spatial group of accepted loops found by BFS region growing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoopCluster {
    pub id: u64,
    /// Indices into the accepted-loop list this cluster was built from.
    pub members: Vec<usize>,
    pub kind: ClusterKind,
}
