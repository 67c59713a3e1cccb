use nalgebra::DMatrix;

use crate::{CoreError, Result};

use super::derivs::feature_block;
use super::{cluster_noise_covariance, derivatives, BAProblem, PointCluster};

/// Relative eigenvalue threshold below which a Hessian direction counts as
/// unobservable.
const NULL_SPACE_REL: f64 = 1e-9;

/// First-order covariance of the converged pose estimate under iid
/// isotropic per-point sensor noise of standard deviation `sigma`:
/// Σ = H⁻¹ (Σ_ij L_ij Σ_c L_ijᵀ) H⁻ᵀ over the active poses, where L_ij is
/// the sensitivity of the gradient to the 9 entries of cluster (i,j),
/// computed by central differences. Rows of frozen and gauge poses are
/// zero in the returned full-size matrix.
pub fn pose_covariance(problem: &BAProblem, sigma: f64) -> Result<DMatrix<f64>> {
    let mp = problem.poses.len();
    let active = problem.active_indices();
    if active.is_empty() {
        return Err(CoreError::InvalidConfig("no active poses for covariance".into()));
    }
    let na = 6 * active.len();
    let mut row_of = vec![usize::MAX; mp];
    for (r, &p) in active.iter().enumerate() {
        row_of[p] = r;
    }

    let d = derivatives(problem);
    let mut h_a = DMatrix::zeros(na, na);
    for (r, &pr) in active.iter().enumerate() {
        for (c, &pc) in active.iter().enumerate() {
            for m in 0..6 {
                for q in 0..6 {
                    h_a[(6 * r + m, 6 * c + q)] = d.hessian[(6 * pr + m, 6 * pc + q)];
                }
            }
        }
    }
    let eig = h_a.clone().symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let null_dim = eig.eigenvalues.iter().filter(|&&l| l < NULL_SPACE_REL * lam_max).count();
    if null_dim > 0 {
        return Err(CoreError::UnobservableDirections { dim: null_dim });
    }
    let h_inv = h_a.try_inverse().ok_or(CoreError::UnobservableDirections { dim: 1 })?;

    // Middle term: Σ_ij L_ij Σ_c L_ijᵀ, with L restricted to active rows.
    let mut mid = DMatrix::zeros(na, na);
    for feature in &problem.features {
        for (oi, (_, cluster)) in feature.observations.iter().enumerate() {
            let sc = cluster_noise_covariance(cluster, sigma);
            let mut l = DMatrix::zeros(na, 9);
            for e in 0..9 {
                let h = 1e-6 * (1.0 + cluster.entries()[e].abs());
                let grad_at = |delta: f64| {
                    let mut entries = cluster.entries();
                    entries[e] += delta;
                    let mut pert = feature.clone();
                    pert.observations[oi].1 = PointCluster::from_entries(&entries, cluster.n);
                    let block = feature_block(&problem.poses, &pert, false);
                    let mut g = vec![0.0; na];
                    if let Some(b) = block {
                        for (pj, gv) in &b.grad {
                            if row_of[*pj] != usize::MAX {
                                for m in 0..6 {
                                    g[6 * row_of[*pj] + m] = gv[m];
                                }
                            }
                        }
                    }
                    g
                };
                let gp = grad_at(h);
                let gm = grad_at(-h);
                for r in 0..na {
                    l[(r, e)] = (gp[r] - gm[r]) / (2.0 * h);
                }
            }
            let lsc = &l * sc;
            mid += lsc * l.transpose();
        }
    }

    let sigma_active = &h_inv * mid * h_inv.transpose();
    let mut full = DMatrix::zeros(6 * mp, 6 * mp);
    for (r, &pr) in active.iter().enumerate() {
        for (c, &pc) in active.iter().enumerate() {
            for m in 0..6 {
                for q in 0..6 {
                    full[(6 * pr + m, 6 * pc + q)] = sigma_active[(6 * r + m, 6 * c + q)];
                }
            }
        }
    }
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ba::fixtures::orthogonal_planes_problem;
    use crate::ba::{lm_solve, FeatureAssociation, LmOptions};
    use crate::geom::Se3;
    use nalgebra::DVector;

    #[test]
    fn zero_noise_gives_zero_covariance() {
        let (problem, _) = orthogonal_planes_problem(1, 1, 3, 50, 0.0);
        let cov = pose_covariance(&problem, 0.0).unwrap();
        assert_eq!(cov.norm(), 0.0);
    }

    #[test]
    fn covariance_scales_quadratically_with_sigma() {
        let (problem, _) = orthogonal_planes_problem(2, 1, 3, 50, 0.0);
        let c1 = pose_covariance(&problem, 0.01).unwrap();
        let c2 = pose_covariance(&problem, 0.02).unwrap();
        let rel = (&c2 - &c1 * 4.0).norm() / c2.norm();
        assert!(rel < 1e-6, "rel {rel:e}");
    }

    #[test]
    fn two_planes_leave_unobservable_directions() {
        let (base, _) = orthogonal_planes_problem(3, 1, 3, 50, 0.0);
        let features: Vec<FeatureAssociation> =
            base.features.iter().take(2).cloned().collect();
        let problem = crate::ba::BAProblem::new(
            base.poses.clone(),
            features,
            base.frozen.clone(),
            false,
        )
        .unwrap();
        match pose_covariance(&problem, 0.01) {
            Err(CoreError::UnobservableDirections { dim }) => assert_eq!(dim, 2),
            other => panic!("expected unobservable directions, got {other:?}"),
        }
    }

    #[test]
    fn matches_monte_carlo_over_noise_redraws() {
        let sigma = 0.01;
        let redraws = 500;
        let (clean, gt) = orthogonal_planes_problem(4, 0, 3, 60, 0.0);
        let analytic = pose_covariance(&clean, sigma).unwrap();
        let active = clean.active_indices();
        let na = 6 * active.len();

        let mut mean = DVector::zeros(na);
        let mut second = DMatrix::zeros(na, na);
        for redraw in 0..redraws {
            let (noisy, _) = orthogonal_planes_problem(4, 1000 + redraw, 3, 60, sigma);
            let res = lm_solve(&noisy, &LmOptions::default()).unwrap();
            let mut delta = DVector::zeros(na);
            for (r, &p) in active.iter().enumerate() {
                let d: Se3 = gt[p].delta_to(&res.poses[p]);
                let xi = d.log();
                for m in 0..6 {
                    delta[6 * r + m] = xi[m];
                }
            }
            mean += &delta;
            second += &delta * delta.transpose();
        }
        let n = redraws as f64;
        mean /= n;
        let mc = second / n - &mean * mean.transpose();

        let mut analytic_active = DMatrix::zeros(na, na);
        for (r, &pr) in active.iter().enumerate() {
            for (c, &pc) in active.iter().enumerate() {
                for m in 0..6 {
                    for q in 0..6 {
                        analytic_active[(6 * r + m, 6 * c + q)] =
                            analytic[(6 * pr + m, 6 * pc + q)];
                    }
                }
            }
        }
        let rel = (&mc - &analytic_active).norm() / mc.norm();
        assert!(rel < 0.25, "Monte Carlo mismatch: rel {rel:.3}");
    }
}
