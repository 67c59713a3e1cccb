//! Loop-closure processing: statistical denoising, plane-to-plane
//! alignment with consensus-based outlier rejection, BFS region-growing
//! classification, and distance-based recall of rejected loops.

mod classify;
mod filter;
mod gicp;
mod types;
mod validate;

pub use classify::{classify_loops, recall_loops, set_centers};
pub use filter::sor_filter;
pub use gicp::{gicp_align, surface_covariances, GicpResult};
pub use types::{ClusterKind, LoopCluster, LoopClosure, LoopStatus};
pub use validate::{validate_loop, LoopParams};
