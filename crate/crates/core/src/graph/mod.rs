//! Pose graph construction and optimization.
//!
//! Two passes share one solver. The first stitches per-robot odometry with
//! validated loop closures (and feeds the loop-recall iteration); the last
//! blends locally refined poses back into globally consistent trajectories
//! using odometry smoothness plus sparsified refinement constraints.

use std::collections::BTreeMap;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::geom::{PoseKey, Se3};
use crate::{CoreError, Result};

mod build;
mod g2o;
mod optimize;
mod sparsify;

pub use build::{
    build_fpgo, build_lpgo, fpgo_with_recall, run_lpgo, LpgoRun, LpgoWeights, RecallOutcome,
};
pub use g2o::{read_g2o, write_g2o};
pub use optimize::{optimize_graph, OptimizeReport};
pub use sparsify::{
    registration_covariance, sparsify_ba_constraints, SparsificationVerdict, SparsifyParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Odometry,
    Loop,
    Ba,
}

/// One relative-pose constraint between two nodes.
#[derive(Clone, Debug)]
pub struct GraphEdge {
    pub kind: EdgeKind,
    pub a: PoseKey,
    pub b: PoseKey,
    /// Pose of frame `b` expressed in frame `a`.
    pub measurement: Se3,
    /// Symmetric PSD weighting of the 6-dof residual.
    pub information: Matrix6<f64>,
}

impl GraphEdge {
    pub fn new(
        kind: EdgeKind,
        a: PoseKey,
        b: PoseKey,
        measurement: Se3,
        information: Matrix6<f64>,
    ) -> Result<Self> {
        if a == b {
            return Err(CoreError::InvalidConfig(format!("self-edge on node {a}")));
        }
        let asym = (information - information.transpose()).amax();
        if asym > 1e-9 {
            return Err(CoreError::InvalidConfig(format!(
                "edge {a}-{b}: information matrix asymmetric by {asym:e}"
            )));
        }
        let min_eig = information
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v));
        if min_eig < -1e-9 {
            return Err(CoreError::InvalidConfig(format!(
                "edge {a}-{b}: information matrix has eigenvalue {min_eig:e}"
            )));
        }
        Ok(GraphEdge { kind, a, b, measurement, information })
    }

    /// Edge with isotropic information `w·I`.
    pub fn weighted(kind: EdgeKind, a: PoseKey, b: PoseKey, measurement: Se3, w: f64) -> Result<Self> {
        if !(w > 0.0) {
            return Err(CoreError::InvalidConfig(format!("edge {a}-{b}: weight {w} must be > 0")));
        }
        GraphEdge::new(kind, a, b, measurement, Matrix6::identity() * w)
    }
}

/// Poses of every robot plus the constraints between them. The anchor node
/// is held fixed during optimization and defines the world frame.
#[derive(Clone, Debug)]
pub struct PoseGraph {
    pub nodes: BTreeMap<PoseKey, Se3>,
    pub edges: Vec<GraphEdge>,
    pub anchor: PoseKey,
}

impl PoseGraph {
    /// Structural checks: anchor exists, edges reference known nodes.
    pub fn validate(&self) -> Result<()> {
        if !self.nodes.contains_key(&self.anchor) {
            return Err(CoreError::InvalidConfig(format!(
                "anchor {} is not a node of the graph",
                self.anchor
            )));
        }
        for e in &self.edges {
            for key in [e.a, e.b] {
                if !self.nodes.contains_key(&key) {
                    return Err(CoreError::InvalidConfig(format!(
                        "edge {}-{} references unknown node {key}",
                        e.a, e.b
                    )));
                }
            }
        }
        Ok(())
    }
}
