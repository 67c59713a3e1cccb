//! Window-scoped map refinement: spherical pose windows around loop
//! sites, per-robot rigid pre-alignment, inside-out diffusion of the
//! plane-adjustment problem, and a hierarchical variant for long
//! multi-loop corridors.

mod dba;
mod hba;
mod prealign;
mod window;

pub use dba::{
    dba_covariance_check, dba_optimize, dba_vs_joint_report, flops_model, refinement_rates,
    CovarianceCheck, DbaJointReport, DbaOutcome, FlopsModel, RefinementRates, StageReport,
};
pub use hba::{spatial_hba, HbaOptions};
pub use prealign::{prealign_clusters, PrealignOutcome};
pub use window::{build_window, plan_diffusion, DiffusionPlan, SpatialWindow, MIN_WINDOW_POSES};

/// Default sphere radius in meters for a loop-centered window.
pub const DEFAULT_WINDOW_RADIUS: f64 = 15.0;

/// Default number of diffusion shells per window.
pub const DEFAULT_DIFFUSION: usize = 3;

/// Per-window diagnostic record emitted by the pipeline.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct WindowReport {
    pub window_id: u64,
    pub group_sizes: Vec<usize>,
    pub pre_cost: f64,
    pub post_cost: f64,
    pub failed: bool,
    /// Coupling-vs-main-term rates per diffusion stage past the first.
    pub stage_rates: Vec<RefinementRates>,
}
