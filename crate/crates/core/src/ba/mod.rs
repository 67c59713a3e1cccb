//! Eigenvalue-based plane bundle adjustment: adaptive plane extraction,
//! point-cluster assembly, λ3 cost with analytic first and second
//! derivatives, an LM solver over pose perturbations, and first-order
//! pose covariance propagation from per-point sensor noise.

mod cluster;
mod covariance;
mod derivs;
mod extract;
pub mod fixtures;
mod problem;
mod solve;

pub use cluster::{cluster_coordinate, cluster_noise_covariance, PointCluster};
pub(crate) use derivs::eigen_desc;
pub use covariance::pose_covariance;
pub use derivs::{derivatives, plane_cost, BADerivatives};
pub use extract::{extract_planes, ExtractConfig};
pub use problem::{BAProblem, FeatureAssociation};
pub use solve::{lm_solve, LmOptions, LmResult};

/// Minimum total point count for a feature to enter the cost.
pub(crate) const MIN_FEATURE_POINTS: usize = 3;

/// Below this λ2−λ3 gap the eigenvector cross terms blow up; the feature
/// then contributes gradient only.
pub(crate) const EIGEN_GAP_MIN: f64 = 1e-10;
