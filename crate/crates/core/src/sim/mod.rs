//! Deterministic synthetic multi-robot dataset generator: planar worlds,
//! spherical range scans, odometry drift, and loop candidates with injected
//! false positives. Stands in for a live detector so the rest of the
//! pipeline can be exercised with known ground truth.

mod bundle;
mod candidates;
mod drift;
mod scan;
mod world;

pub use bundle::{generate_bundle, read_session, write_session, RobotSession, SessionBundle, SessionSpec};
pub use candidates::{candidates_from_trajectories, generate_loop_candidates};
pub use drift::{inject_drift, DriftModel};
pub use scan::simulate_scan;
pub use world::{generate_world, Plane, PlaneSet, WorldKind};

pub(crate) use bundle::derive_seed;
