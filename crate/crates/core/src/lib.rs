//! Multi-session point cloud map fusion.
//!
//! The crate is organized as a pipeline: simulated (or recorded) per-robot
//! sessions come in, loop candidates are validated and clustered, a first
//! pose graph pass stitches the sessions, plane-based bundle adjustment
//! refines geometry inside spatial windows, and a second pose graph pass
//! propagates the refinement to every pose. `metrics` scores the result.

pub mod ba;
pub mod error;
pub mod geom;
pub mod graph;
pub mod io;
pub mod loops;
pub mod metrics;
pub mod sim;
pub mod spatial;

pub use error::CoreError;
pub use geom::{Pose, PoseKey, PointCloud, Se3, SpatialIndex};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
