use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ba::{
    derivatives, extract_planes, lm_solve, plane_cost, BAProblem, ExtractConfig,
    FeatureAssociation, LmOptions,
};
use crate::geom::{PointCloud, PoseKey, Se3};
use crate::{CoreError, Result};

use super::{DiffusionPlan, SpatialWindow};

/// Size of the coupling between the already-refined inner block and the
/// newly added shell, relative to the shell's own normal equations. Small
/// rates certify that solving the shell alone loses little against the
/// joint solve.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RefinementRates {
    pub r_h: f64,
    pub r_j: f64,
}

/// Diagnostics for one diffusion stage.
#[derive(Clone, Debug)]
pub struct StageReport {
    /// Sizes of the groups included at this stage (inner to outer).
    pub group_sizes: Vec<usize>,
    pub pre_cost: f64,
    pub post_cost: f64,
    /// Coupling rates against the frozen inner block; absent for the
    /// first stage, which has no frozen block.
    pub rates: Option<RefinementRates>,
}

/// Result of refining one window inside-out.
#[derive(Clone, Debug)]
pub struct DbaOutcome {
    /// Refined poses for the window members. When `failed`, these are the
    /// input estimates, untouched.
    pub poses: BTreeMap<PoseKey, Se3>,
    pub failed: bool,
    pub stages: Vec<StageReport>,
}

/// Refines the window in `plan.depth()` stages. Stage d re-extracts
/// planar features over groups 0..=d at the current estimates and solves
/// with groups 0..d-1 frozen; only the first stage gauge-fixes its first
/// pose, later stages inherit the gauge from the frozen block. A stage
/// that aborts (degenerate normal equations, no usable features) marks the
/// window failed and reverts every member to its input estimate.
pub fn dba_optimize(
    window: &SpatialWindow,
    plan: &DiffusionPlan,
    poses: &BTreeMap<PoseKey, Se3>,
    scans: &BTreeMap<PoseKey, PointCloud>,
    extract: &ExtractConfig,
    lm: &LmOptions,
) -> Result<DbaOutcome> {
    if plan.groups.is_empty() {
        return Err(CoreError::EmptyInput("diffusion plan groups"));
    }
    let mut planned: Vec<PoseKey> = plan.groups.concat();
    planned.sort_unstable();
    let mut members = window.members.clone();
    members.sort_unstable();
    if planned != members {
        return Err(CoreError::InvalidConfig(format!(
            "diffusion plan does not partition window {}",
            window.id
        )));
    }
    for key in &members {
        if !poses.contains_key(key) {
            return Err(CoreError::InvalidConfig(format!(
                "window member {key} has no pose estimate"
            )));
        }
        if !scans.contains_key(key) {
            return Err(CoreError::InvalidConfig(format!("window member {key} has no scan")));
        }
    }

    let input: BTreeMap<PoseKey, Se3> =
        members.iter().map(|k| (*k, poses[k])).collect();
    let mut current = input.clone();
    let mut stages = Vec::with_capacity(plan.depth());

    for d in 0..plan.depth() {
        let stage_keys: Vec<PoseKey> = plan.groups[..=d].concat();
        let stage_poses: Vec<Se3> = stage_keys.iter().map(|k| current[k]).collect();
        let stage_clouds: Vec<PointCloud> =
            stage_keys.iter().map(|k| scans[k].clone()).collect();
        let frozen_count: usize = plan.groups[..d].iter().map(|g| g.len()).sum();
        let frozen: Vec<bool> =
            (0..stage_keys.len()).map(|i| i < frozen_count).collect();

        let stage = (|| -> Result<(Vec<Se3>, StageReport)> {
            let features = extract_planes(&stage_clouds, &stage_poses, extract)?;
            if features.is_empty() {
                return Err(CoreError::DegeneratePointSet(format!(
                    "window {} stage {d} produced no planar features",
                    window.id
                )));
            }
            let rates = if d == 0 {
                None
            } else {
                stage_rates(&stage_poses, &features, frozen_count, lm.mu0)
            };
            let problem =
                BAProblem::new(stage_poses.clone(), features, frozen.clone(), d == 0)?;
            let pre_cost = plane_cost(&problem);
            let solved = lm_solve(&problem, lm)?;
            let report = StageReport {
                group_sizes: plan.group_sizes()[..=d].to_vec(),
                pre_cost,
                post_cost: solved.final_cost,
                rates,
            };
            Ok((solved.poses, report))
        })();

        match stage {
            Ok((new_poses, report)) => {
                for (key, pose) in stage_keys.iter().zip(new_poses) {
                    current.insert(*key, pose);
                }
                stages.push(report);
            }
            Err(e) => {
                eprintln!("warning: window {} stage {d} aborted: {e}; reverting", window.id);
                return Ok(DbaOutcome { poses: input, failed: true, stages });
            }
        }
    }
    Ok(DbaOutcome { poses: current, failed: false, stages })
}

/// Coupling rates of the stage's free shell against its frozen interior,
/// measured on an unfrozen copy of the problem so the cross blocks are
/// populated. Returns None when the interior block is singular even after
/// damping.
fn stage_rates(
    stage_poses: &[Se3],
    features: &[FeatureAssociation],
    frozen_count: usize,
    mu: f64,
) -> Option<RefinementRates> {
    let unfrozen = BAProblem::new(
        stage_poses.to_vec(),
        features.to_vec(),
        vec![false; stage_poses.len()],
        true,
    )
    .ok()?;
    let d = derivatives(&unfrozen);
    refinement_rates(&d.hessian, &d.grad, 6 * frozen_count, mu).ok()
}

/// Frobenius-norm ratios of the inner-outer coupling to the outer block's
/// own terms, at damping `mu`:
///   r_h = ‖H10·(H00+μI)⁻¹·H01‖ / ‖H11+μI‖
///   r_j = ‖H10·(H00+μI)⁻¹·J0‖ / ‖J1‖   (0 when ‖J1‖ = 0)
/// Block 0 is the leading `block0_dim` coordinates.
pub fn refinement_rates(
    hessian: &DMatrix<f64>,
    grad: &DVector<f64>,
    block0_dim: usize,
    mu: f64,
) -> Result<RefinementRates> {
    let dim = hessian.nrows();
    if hessian.ncols() != dim || grad.len() != dim {
        return Err(CoreError::LengthMismatch {
            context: "refinement rates hessian vs gradient",
            left: dim,
            right: grad.len(),
        });
    }
    if block0_dim == 0 || block0_dim >= dim {
        return Err(CoreError::InvalidConfig(format!(
            "block split {block0_dim} of {dim} leaves an empty block"
        )));
    }
    let n1 = dim - block0_dim;
    let mut h00 = hessian.view((0, 0), (block0_dim, block0_dim)).into_owned();
    let h01 = hessian.view((0, block0_dim), (block0_dim, n1)).into_owned();
    let h10 = hessian.view((block0_dim, 0), (n1, block0_dim)).into_owned();
    let mut h11 = hessian.view((block0_dim, block0_dim), (n1, n1)).into_owned();
    for i in 0..block0_dim {
        h00[(i, i)] += mu;
    }
    for i in 0..n1 {
        h11[(i, i)] += mu;
    }
    let j0 = grad.rows(0, block0_dim).into_owned();
    let j1 = grad.rows(block0_dim, n1).into_owned();

    let lu = h00.lu();
    let x = lu.solve(&h01).ok_or_else(|| {
        CoreError::InvalidConfig(format!("inner block singular at damping {mu:e}"))
    })?;
    let y = lu.solve(&j0).ok_or_else(|| {
        CoreError::InvalidConfig(format!("inner block singular at damping {mu:e}"))
    })?;

    let r_h = (&h10 * &x).norm() / h11.norm();
    let j1_norm = j1.norm();
    let r_j = if j1_norm == 0.0 { 0.0 } else { (&h10 * &y).norm() / j1_norm };
    if !r_h.is_finite() || !r_j.is_finite() {
        return Err(CoreError::InvalidConfig(
            "refinement rates are not finite".into(),
        ));
    }
    Ok(RefinementRates { r_h, r_j })
}

/// Operation-count model of one damped normal-equation sweep split into
/// groups: assembly linear and quadratic in each group's pose count, and a
/// cubic dense solve, all scaled by the feature count where applicable.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlopsModel {
    pub linear: f64,
    pub quadratic: f64,
    pub cubic: f64,
}

impl FlopsModel {
    pub fn total(&self) -> f64 {
        self.linear + self.quadratic + self.cubic
    }
}

/// Σ over groups of (M_f·m + M_f·m² + m³), in pose units (the 6× state
/// multiplier cancels in every ratio). The joint solve is the single-group
/// case.
pub fn flops_model(m_f: usize, group_sizes: &[usize]) -> FlopsModel {
    let mf = m_f as f64;
    let mut model = FlopsModel { linear: 0.0, quadratic: 0.0, cubic: 0.0 };
    for &m in group_sizes {
        let m = m as f64;
        model.linear += mf * m;
        model.quadratic += mf * m * m;
        model.cubic += m * m * m;
    }
    model
}

/// One-iteration comparison of the joint damped step against the
/// shell-only step, at the current estimate of an unfrozen problem whose
/// poses are grouped `group_sizes` (last group = shell).
#[derive(Clone, Debug)]
pub struct DbaJointReport {
    /// Shell block of the joint step, via the block elimination
    ///   Δ¹ = −S⁻¹(J1 − H10(H00+μI)⁻¹J0),  S = H11+μI − H10(H00+μI)⁻¹H01.
    /// Zero when `degenerate`.
    pub delta_joint: DVector<f64>,
    /// Shell-only step −(H11+μI)⁻¹J1. Zero when `degenerate`.
    pub delta_dba: DVector<f64>,
    pub rates: RefinementRates,
    /// Cost after applying the full joint step to every pose.
    pub cost_joint: f64,
    /// Cost after applying the shell-only step, inner poses untouched.
    pub cost_dba: f64,
    pub flops_joint: FlopsModel,
    pub flops_dba: FlopsModel,
    /// Set when the eliminated system is singular; the step fields are
    /// zeroed and both costs equal the current cost.
    pub degenerate: bool,
}

fn solve_sym(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    match m.clone().cholesky() {
        Some(chol) => Some(chol.solve(rhs)),
        None => m.clone().lu().solve(rhs),
    }
}

pub fn dba_vs_joint_report(
    problem: &BAProblem,
    group_sizes: &[usize],
    mu: f64,
) -> Result<DbaJointReport> {
    let n = problem.poses.len();
    if group_sizes.len() < 2 {
        return Err(CoreError::InvalidConfig(
            "joint-vs-shell comparison needs at least two groups".into(),
        ));
    }
    if group_sizes.iter().sum::<usize>() != n {
        return Err(CoreError::LengthMismatch {
            context: "group sizes vs problem poses",
            left: group_sizes.iter().sum(),
            right: n,
        });
    }
    if problem.frozen.iter().any(|f| *f) {
        return Err(CoreError::InvalidConfig(
            "joint-vs-shell comparison requires an unfrozen problem".into(),
        ));
    }
    let shell = *group_sizes.last().unwrap();
    let block0_dim = 6 * (n - shell);
    let n1 = 6 * shell;

    let d = derivatives(problem);
    let rates = refinement_rates(&d.hessian, &d.grad, block0_dim, mu)?;
    let flops_joint = flops_model(problem.features.len(), &[n]);
    let flops_dba = flops_model(problem.features.len(), group_sizes);

    let mut h00 = d.hessian.view((0, 0), (block0_dim, block0_dim)).into_owned();
    let h01 = d.hessian.view((0, block0_dim), (block0_dim, n1)).into_owned();
    let h10 = d.hessian.view((block0_dim, 0), (n1, block0_dim)).into_owned();
    let mut h11 = d.hessian.view((block0_dim, block0_dim), (n1, n1)).into_owned();
    for i in 0..block0_dim {
        h00[(i, i)] += mu;
    }
    for i in 0..n1 {
        h11[(i, i)] += mu;
    }
    let j0 = d.grad.rows(0, block0_dim).into_owned();
    let j1 = d.grad.rows(block0_dim, n1).into_owned();

    let lu00 = h00.lu();
    let (x, y) = match (lu00.solve(&h01), lu00.solve(&j0)) {
        (Some(x), Some(y)) => (x, y),
        _ => return Ok(degenerate_report(rates, d.cost, flops_joint, flops_dba, n1)),
    };
    let s = &h11 - &h10 * &x;
    let rhs_joint = -(&j1 - &h10 * &y);
    let Some(delta_joint) = solve_sym(&s, &rhs_joint) else {
        return Ok(degenerate_report(rates, d.cost, flops_joint, flops_dba, n1));
    };
    let Some(delta_dba) = solve_sym(&h11, &(-&j1)) else {
        return Ok(degenerate_report(rates, d.cost, flops_joint, flops_dba, n1));
    };

    // Inner block of the joint step by back substitution, to evaluate the
    // joint cost over all poses.
    let Some(delta0) = lu00.solve(&(-&j0 - &h01 * &delta_joint)) else {
        return Ok(degenerate_report(rates, d.cost, flops_joint, flops_dba, n1));
    };
    let mut joint_poses = problem.poses.clone();
    for (i, pose) in joint_poses.iter_mut().enumerate() {
        let xi = if 6 * i < block0_dim {
            delta0.fixed_rows::<6>(6 * i).into_owned()
        } else {
            delta_joint.fixed_rows::<6>(6 * i - block0_dim).into_owned()
        };
        *pose = pose.compose(&Se3::exp(&xi));
    }
    let mut dba_poses = problem.poses.clone();
    for (r, pose) in dba_poses.iter_mut().enumerate().skip(n - shell) {
        let xi = delta_dba.fixed_rows::<6>(6 * (r - (n - shell))).into_owned();
        *pose = pose.compose(&Se3::exp(&xi));
    }
    let cost_at = |poses: Vec<Se3>| -> Result<f64> {
        let p = BAProblem::new(poses, problem.features.clone(), vec![false; n], true)?;
        Ok(plane_cost(&p))
    };

    Ok(DbaJointReport {
        delta_joint,
        delta_dba,
        rates,
        cost_joint: cost_at(joint_poses)?,
        cost_dba: cost_at(dba_poses)?,
        flops_joint,
        flops_dba,
        degenerate: false,
    })
}

fn degenerate_report(
    rates: RefinementRates,
    cost: f64,
    flops_joint: FlopsModel,
    flops_dba: FlopsModel,
    n1: usize,
) -> DbaJointReport {
    DbaJointReport {
        delta_joint: DVector::zeros(n1),
        delta_dba: DVector::zeros(n1),
        rates,
        cost_joint: cost,
        cost_dba: cost,
        flops_joint,
        flops_dba,
        degenerate: true,
    }
}

/// Undamped covariance comparison between the shell-only solve and the
/// shell block of the joint solve.
#[derive(Clone, Debug)]
pub struct CovarianceCheck {
    /// σ²·H11⁻¹, the shell-only covariance.
    pub sigma_dba_1: DMatrix<f64>,
    /// σ²·(H11 − H10·H00⁻¹·H01)⁻¹, the shell block of the joint
    /// covariance.
    pub sigma_joint_11: DMatrix<f64>,
    /// Smallest eigenvalue of sigma_joint_11 − sigma_dba_1; non-negative
    /// up to round-off when the ordering holds.
    pub psd_margin: f64,
}

/// Certifies that ignoring the inner block never overstates the shell's
/// uncertainty: the shell-only covariance is dominated by the joint
/// covariance's shell block. Requires both diagonal blocks positive
/// definite.
pub fn dba_covariance_check(
    hessian: &DMatrix<f64>,
    block0_dim: usize,
    sigma: f64,
) -> Result<CovarianceCheck> {
    let dim = hessian.nrows();
    if hessian.ncols() != dim {
        return Err(CoreError::LengthMismatch {
            context: "covariance check hessian",
            left: hessian.nrows(),
            right: hessian.ncols(),
        });
    }
    if block0_dim == 0 || block0_dim >= dim {
        return Err(CoreError::InvalidConfig(format!(
            "block split {block0_dim} of {dim} leaves an empty block"
        )));
    }
    let n1 = dim - block0_dim;
    let h00 = hessian.view((0, 0), (block0_dim, block0_dim)).into_owned();
    let h01 = hessian.view((0, block0_dim), (block0_dim, n1)).into_owned();
    let h10 = hessian.view((block0_dim, 0), (n1, block0_dim)).into_owned();
    let h11 = hessian.view((block0_dim, block0_dim), (n1, n1)).into_owned();

    let precondition = |what: &str| {
        CoreError::InvalidConfig(format!("lemma preconditions unmet: {what}"))
    };
    let inv11 = h11
        .clone()
        .cholesky()
        .ok_or_else(|| precondition("shell block not positive definite"))?
        .inverse();
    let x = h00
        .cholesky()
        .ok_or_else(|| precondition("inner block not positive definite"))?
        .solve(&h01);
    let s = &h11 - &h10 * x;
    let inv_s = s
        .cholesky()
        .ok_or_else(|| precondition("eliminated shell system not positive definite"))?
        .inverse();

    let s2 = sigma * sigma;
    let sigma_dba_1 = inv11 * s2;
    let sigma_joint_11 = inv_s * s2;
    let diff = &sigma_joint_11 - &sigma_dba_1;
    let diff = (&diff + diff.transpose()) * 0.5;
    let psd_margin = diff
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let psd_margin = if psd_margin.is_finite() { psd_margin } else { 0.0 };
    Ok(CovarianceCheck { sigma_dba_1, sigma_joint_11, psd_margin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Frame, Twist};
    use crate::spatial::{build_window, plan_diffusion};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_spd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.1
    }

    #[test]
    fn scalar_blocks_match_hand_formula() {
        let (a, b, c, mu) = (2.0, 3.0, 0.7, 0.01);
        let h = DMatrix::from_row_slice(2, 2, &[a, c, c, b]);
        let g = DVector::from_vec(vec![0.4, 0.5]);
        let rates = refinement_rates(&h, &g, 1, mu).unwrap();
        assert_relative_eq!(rates.r_h, c * c / ((a + mu) * (b + mu)), epsilon = 1e-12);
        assert_relative_eq!(rates.r_j, c * 0.4 / ((a + mu) * 0.5), epsilon = 1e-12);
    }

    #[test]
    fn decoupled_blocks_have_zero_rates_and_equal_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut h = DMatrix::zeros(10, 10);
        h.view_mut((0, 0), (4, 4)).copy_from(&rand_spd(&mut rng, 4));
        h.view_mut((4, 4), (6, 6)).copy_from(&rand_spd(&mut rng, 6));
        let g = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let rates = refinement_rates(&h, &g, 4, 1e-4).unwrap();
        assert_eq!(rates.r_h, 0.0);
        assert_eq!(rates.r_j, 0.0);

        // With zero coupling the eliminated system IS the shell system, so
        // both one-step updates coincide bitwise.
        let mu = 1e-4;
        let n1 = 6;
        let h11d = {
            let mut m = h.view((4, 4), (n1, n1)).into_owned();
            for i in 0..n1 {
                m[(i, i)] += mu;
            }
            m
        };
        let j1 = g.rows(4, n1).into_owned();
        let h10 = h.view((4, 0), (n1, 4)).into_owned();
        let h00d = {
            let mut m = h.view((0, 0), (4, 4)).into_owned();
            for i in 0..4 {
                m[(i, i)] += mu;
            }
            m
        };
        let lu = h00d.lu();
        let x = lu.solve(&h.view((0, 4), (4, n1)).into_owned()).unwrap();
        let s = &h11d - &h10 * x;
        assert_eq!(s, h11d);
        let joint = solve_sym(&s, &(-&j1)).unwrap();
        let dba = solve_sym(&h11d, &(-&j1)).unwrap();
        assert_eq!(joint, dba);
    }

    #[test]
    fn strong_inner_block_shrinks_both_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut h = rand_spd(&mut rng, 12);
        // Symmetrize exactly so both variants stay valid inputs.
        h = (&h + h.transpose()) * 0.5;
        let g = DVector::from_fn(12, |_, _| rng.gen_range(-1.0..1.0));
        let base = refinement_rates(&h, &g, 6, 1e-6).unwrap();

        let mut strong = h.clone();
        for r in 0..6 {
            for c in 0..6 {
                strong[(r, c)] *= 100.0;
            }
        }
        let scaled = refinement_rates(&strong, &g, 6, 1e-6).unwrap();
        let ratio_h = base.r_h / scaled.r_h;
        let ratio_j = base.r_j / scaled.r_j;
        assert!((80.0..125.0).contains(&ratio_h), "r_h ratio {ratio_h}");
        assert!((80.0..125.0).contains(&ratio_j), "r_j ratio {ratio_j}");
    }

    #[test]
    fn zero_shell_gradient_reports_zero_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let h = rand_spd(&mut rng, 8);
        let mut g = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        for i in 5..8 {
            g[i] = 0.0;
        }
        let rates = refinement_rates(&h, &g, 5, 1e-4).unwrap();
        assert_eq!(rates.r_j, 0.0);
        assert!(rates.r_h > 0.0);
    }

    #[test]
    fn bad_splits_are_rejected() {
        let h = DMatrix::identity(4, 4);
        let g = DVector::zeros(4);
        assert!(refinement_rates(&h, &g, 0, 0.1).is_err());
        assert!(refinement_rates(&h, &g, 4, 0.1).is_err());
    }

    #[test]
    fn partition_never_exceeds_joint_counts() {
        // Exact integer form of the split-cost bounds: for any partition of
        // M poses, Σ m² ≤ M² and Σ m³ ≤ M³.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..200 {
            let mut remaining: u64 = rng.gen_range(1..=60);
            let m_total = remaining;
            let mut parts: Vec<u64> = Vec::new();
            while remaining > 0 {
                let take = rng.gen_range(1..=remaining);
                parts.push(take);
                remaining -= take;
            }
            let sq: u64 = parts.iter().map(|m| m * m).sum();
            let cu: u64 = parts.iter().map(|m| m * m * m).sum();
            assert!(sq <= m_total * m_total);
            assert!(cu <= m_total * m_total * m_total);

            let split = flops_model(7, &parts.iter().map(|&m| m as usize).collect::<Vec<_>>());
            let joint = flops_model(7, &[m_total as usize]);
            assert!(split.quadratic <= joint.quadratic + 1e-9);
            assert!(split.cubic <= joint.cubic + 1e-9);
            assert_relative_eq!(split.linear, joint.linear, epsilon = 1e-9);
        }
    }

    #[test]
    fn balanced_groups_cut_the_cubic_term_quadratically() {
        let joint = flops_model(200, &[200]);
        let split = flops_model(200, &[50, 50, 50, 50]);
        assert_relative_eq!(split.cubic / joint.cubic, 1.0 / 16.0, epsilon = 1e-12);
        assert!(split.total() < joint.total());
    }

    #[test]
    fn covariance_ordering_holds_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for trial in 0..20 {
            let h = rand_spd(&mut rng, 24);
            let h = (&h + h.transpose()) * 0.5;
            let check = dba_covariance_check(&h, 12, 0.3).unwrap();
            assert!(
                check.psd_margin >= -1e-8,
                "trial {trial}: margin {}",
                check.psd_margin
            );
        }
    }

    #[test]
    fn zero_noise_gives_zero_covariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let h = rand_spd(&mut rng, 10);
        let h = (&h + h.transpose()) * 0.5;
        let check = dba_covariance_check(&h, 4, 0.0).unwrap();
        assert_eq!(check.sigma_dba_1.norm(), 0.0);
        assert_eq!(check.sigma_joint_11.norm(), 0.0);
        assert_eq!(check.psd_margin, 0.0);
    }

    #[test]
    fn decoupled_blocks_give_equal_covariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let mut h = DMatrix::zeros(9, 9);
        h.view_mut((0, 0), (4, 4)).copy_from(&rand_spd(&mut rng, 4));
        h.view_mut((4, 4), (5, 5)).copy_from(&rand_spd(&mut rng, 5));
        let check = dba_covariance_check(&h, 4, 1.0).unwrap();
        assert!((&check.sigma_joint_11 - &check.sigma_dba_1).norm() < 1e-12);
        assert!(check.psd_margin.abs() < 1e-12);
    }

    #[test]
    fn indefinite_inner_block_is_refused() {
        let mut h = DMatrix::identity(6, 6);
        h[(0, 0)] = -1.0;
        let err = dba_covariance_check(&h, 3, 1.0).unwrap_err();
        assert!(err.to_string().contains("lemma preconditions unmet"), "{err}");
    }

    // World with three mutually orthogonal planes, observed from sensor
    // poses. Gives well-conditioned stage problems with few poses.
    fn plane_world(rng: &mut ChaCha8Rng, per_plane: usize) -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for _ in 0..per_plane {
            let a: f64 = rng.gen_range(-5.0..5.0);
            let b: f64 = rng.gen_range(-5.0..5.0);
            pts.push(Vector3::new(a, b, -1.5));
            pts.push(Vector3::new(a, -6.0, b.abs() * 0.4));
            pts.push(Vector3::new(-6.0, a, b.abs() * 0.4));
        }
        pts
    }

    /// Ground-truth poses spread along x so diffusion shells separate, plus
    /// sensor-frame scans of the shared world.
    fn scene(
        rng: &mut ChaCha8Rng,
        n_poses: u32,
        per_plane: usize,
    ) -> (BTreeMap<PoseKey, Se3>, BTreeMap<PoseKey, PointCloud>) {
        let world = plane_world(rng, per_plane);
        let mut gt = BTreeMap::new();
        let mut scans = BTreeMap::new();
        for i in 0..n_poses {
            let key = PoseKey::new(0, i);
            // Yaw-only attitude with the translation set directly, so the
            // tests can reason about positions without exp() coupling.
            let mut pose = Se3::exp(&Twist::new(0.0, 0.0, 0.03 * i as f64, 0.0, 0.0, 0.0));
            pose.translation =
                Vector3::new(0.8 * i as f64, 0.1 * (i % 3) as f64, 0.0);
            let scan = PointCloud {
                points: world.iter().map(|p| pose.inverse().transform_point(p)).collect(),
                frame: Frame::Sensor,
                covariances: None,
            };
            gt.insert(key, pose);
            scans.insert(key, scan);
        }
        (gt, scans)
    }

    fn small_extract() -> ExtractConfig {
        ExtractConfig { voxel: 2.0, min_leaf_points: 20, min_views: 2, ..Default::default() }
    }

    #[test]
    fn single_shell_equals_joint_solve_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let (gt, scans) = scene(&mut rng, 6, 150);
        let mut poses = gt.clone();
        for (i, t) in poses.values_mut().enumerate() {
            let s = 0.01 * (i as f64 - 2.5);
            *t = t.compose(&Se3::exp(&Twist::new(s * 0.1, 0.0, 0.0, s, -s, 0.0)));
        }
        let window = build_window(0, Vector3::new(2.0, 0.0, 0.0), 50.0, &poses).unwrap();
        let plan = plan_diffusion(&window, &poses, 1).unwrap();
        let extract = small_extract();
        let lm = LmOptions { max_iter: 12, ..Default::default() };

        let out = dba_optimize(&window, &plan, &poses, &scans, &extract, &lm).unwrap();
        assert!(!out.failed);

        let keys: Vec<PoseKey> = window.members.clone();
        let joint_poses: Vec<Se3> = keys.iter().map(|k| poses[k]).collect();
        let clouds: Vec<PointCloud> = keys.iter().map(|k| scans[k].clone()).collect();
        let features = extract_planes(&clouds, &joint_poses, &extract).unwrap();
        let problem =
            BAProblem::new(joint_poses, features, vec![false; keys.len()], true).unwrap();
        let joint = lm_solve(&problem, &lm).unwrap();
        for (k, want) in keys.iter().zip(&joint.poses) {
            assert_eq!(out.poses[k], *want, "pose {k} differs from the joint solve");
        }
        assert_eq!(out.stages.len(), 1);
        assert!(out.stages[0].rates.is_none());
    }

    #[test]
    fn frozen_interior_pulls_outer_shell_to_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let (gt, scans) = scene(&mut rng, 8, 200);
        // Poses sit at x = 0.8·i around the center; shells split at half
        // the 4.5 m radius, so i ≤ 4 is the interior. It stays at truth
        // while the outer shell drifts.
        let center = Vector3::new(1.6, 0.1, 0.0);
        let mut poses = gt.clone();
        for (k, t) in poses.iter_mut() {
            if (gt[k].translation - center).norm() > 2.25 {
                *t = t.compose(&Se3::exp(&Twist::new(0.004, -0.003, 0.005, 0.06, -0.04, 0.03)));
            }
        }
        let window = build_window(1, center, 4.5, &poses).unwrap();
        let plan = plan_diffusion(&window, &poses, 2).unwrap();
        assert_eq!(plan.depth(), 2, "scene must actually split into two shells");
        let lm = LmOptions { max_iter: 25, ..Default::default() };
        let out =
            dba_optimize(&window, &plan, &poses, &scans, &small_extract(), &lm).unwrap();
        assert!(!out.failed);
        for k in &plan.groups[1] {
            let err_t = (out.poses[k].translation - gt[k].translation).norm();
            let err_r = out.poses[k].delta_to(&gt[k]).rotation_angle();
            assert!(err_t < 0.02, "pose {k}: translation error {err_t}");
            assert!(err_r < 0.3f64.to_radians(), "pose {k}: rotation error {err_r}");
        }
        assert_eq!(out.stages.len(), 2);
        let rates = out.stages[1].rates.expect("second stage reports rates");
        assert!(rates.r_h >= 0.0 && rates.r_j >= 0.0);
    }

    #[test]
    fn freezing_a_bad_interior_cannot_beat_the_joint_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let (gt, mut scans) = scene(&mut rng, 8, 200);
        // Scan noise makes the interior's stand-alone fit statistically
        // different from the joint optimum; freezing that fit denies the
        // second stage the chance to rebalance it.
        for scan in scans.values_mut() {
            for p in &mut scan.points {
                *p += Vector3::from_fn(|_, _| rng.gen_range(-0.02..0.02));
            }
        }
        let center = Vector3::new(1.6, 0.1, 0.0);
        let mut poses = gt.clone();
        for (k, t) in poses.iter_mut() {
            if (gt[k].translation - center).norm() <= 2.25 {
                let xi = Twist::from_fn(|i, _| {
                    if i < 3 {
                        rng.gen_range(-0.02..0.02)
                    } else {
                        rng.gen_range(-0.1..0.1)
                    }
                });
                *t = t.compose(&Se3::exp(&xi));
            }
        }
        let window = build_window(2, center, 4.6, &poses).unwrap();
        let extract = small_extract();
        let lm = LmOptions { max_iter: 60, ..Default::default() };

        // One shared ruler for both runs: features extracted at the true
        // poses. Plane cost ignores a global rigid move, so differing
        // gauges between the runs do not skew the comparison.
        let keys = window.members.clone();
        let gt_poses: Vec<Se3> = keys.iter().map(|k| gt[k]).collect();
        let clouds: Vec<PointCloud> = keys.iter().map(|k| scans[k].clone()).collect();
        let ruler = extract_planes(&clouds, &gt_poses, &extract).unwrap();
        let measure = |out: &DbaOutcome| {
            let final_poses: Vec<Se3> = keys.iter().map(|k| out.poses[k]).collect();
            let p = BAProblem::new(final_poses, ruler.clone(), vec![false; keys.len()], true)
                .unwrap();
            plane_cost(&p)
        };

        let run = |depth: usize| {
            let plan = plan_diffusion(&window, &poses, depth).unwrap();
            assert_eq!(plan.depth(), depth, "shells must not collapse");
            let out = dba_optimize(&window, &plan, &poses, &scans, &extract, &lm).unwrap();
            assert!(!out.failed);
            out
        };
        let out_d2 = run(2);
        let out_d1 = run(1);
        let cost_d2 = measure(&out_d2);
        let cost_d1 = measure(&out_d1);
        assert!(
            cost_d2 >= cost_d1 - 1e-9,
            "freezing a wrong interior must not beat the joint solve: {cost_d2} < {cost_d1}"
        );
        // Non-vacuity: the two schedules must produce genuinely different
        // estimates (beyond a shared rigid move).
        let rel_d1 = out_d1.poses[&keys[0]].delta_to(&out_d1.poses[&keys[7]]);
        let rel_d2 = out_d2.poses[&keys[0]].delta_to(&out_d2.poses[&keys[7]]);
        let diff = rel_d1.delta_to(&rel_d2);
        assert!(
            diff.translation.norm() > 1e-6 || diff.rotation_angle() > 1e-7,
            "paired runs collapsed to identical estimates"
        );
    }

    #[test]
    fn stage_failure_reverts_to_input() {
        // Scans with no planar structure at all: extraction yields nothing,
        // the first stage aborts, and the input comes back untouched.
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let mut poses = BTreeMap::new();
        let mut scans = BTreeMap::new();
        for i in 0..5u32 {
            let key = PoseKey::new(0, i);
            poses.insert(
                key,
                Se3::exp(&Twist::new(0.0, 0.0, 0.0, i as f64, 0.0, 0.0)),
            );
            let points: Vec<Vector3<f64>> =
                (0..40).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0))).collect();
            scans.insert(key, PointCloud { points, frame: Frame::Sensor, covariances: None });
        }
        let window = build_window(3, Vector3::new(2.0, 0.0, 0.0), 20.0, &poses).unwrap();
        let plan = plan_diffusion(&window, &poses, 2).unwrap();
        let out = dba_optimize(
            &window,
            &plan,
            &poses,
            &scans,
            &ExtractConfig { max_split_levels: 0, ..small_extract() },
            &LmOptions::default(),
        )
        .unwrap();
        assert!(out.failed);
        assert_eq!(out.poses, poses);
    }

    #[test]
    fn joint_report_matches_full_damped_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (gt, scans) = scene(&mut rng, 6, 150);
        let mut poses = gt.clone();
        for t in poses.values_mut() {
            *t = t.compose(&Se3::exp(&Twist::new(0.01, -0.008, 0.012, 0.05, 0.04, -0.03)));
        }
        let keys: Vec<PoseKey> = poses.keys().copied().collect();
        let pose_vec: Vec<Se3> = keys.iter().map(|k| poses[k]).collect();
        let clouds: Vec<PointCloud> = keys.iter().map(|k| scans[k].clone()).collect();
        let extract = small_extract();
        let features = extract_planes(&clouds, &pose_vec, &extract).unwrap();
        let problem =
            BAProblem::new(pose_vec, features, vec![false; keys.len()], true).unwrap();
        let mu = 1e-3;
        let report = dba_vs_joint_report(&problem, &[4, 2], mu).unwrap();
        assert!(!report.degenerate);

        // Oracle: block elimination must agree with the direct damped
        // solve of the full system.
        let d = derivatives(&problem);
        let dim = d.hessian.nrows();
        let mut damped = d.hessian.clone();
        for i in 0..dim {
            damped[(i, i)] += mu;
        }
        let full = damped.lu().solve(&(-&d.grad)).unwrap();
        let shell = full.rows(24, 12).into_owned();
        assert!(
            (&report.delta_joint - &shell).norm() < 1e-8 * shell.norm().max(1.0),
            "schur update deviates from the direct solve"
        );
        assert_eq!(report.delta_dba.len(), 12);
        assert!(report.cost_joint.is_finite() && report.cost_dba.is_finite());
        assert_relative_eq!(
            report.flops_dba.cubic,
            (4f64.powi(3) + 2f64.powi(3)),
            epsilon = 1e-12
        );
    }
}
