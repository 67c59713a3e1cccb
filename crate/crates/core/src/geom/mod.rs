//! Foundational geometry: SE(3) algebra, point clouds, spatial indexing,
//! PCA, and trajectory alignment.

mod align;
mod cloud;
mod kdtree;
mod pose;
mod se3;

pub use align::{pca_principal_axis, umeyama_align, umeyama_points};
pub use cloud::{Frame, PointCloud};
pub use kdtree::SpatialIndex;
pub use pose::{Pose, PoseKey};
pub use se3::{Se3, Twist};

pub(crate) use se3::skew;
