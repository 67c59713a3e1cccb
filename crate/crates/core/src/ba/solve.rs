use nalgebra::{DMatrix, DVector};

use crate::geom::Se3;
use crate::{CoreError, Result};

use super::{derivatives, plane_cost, BAProblem};

#[derive(Clone, Copy, Debug)]
pub struct LmOptions {
    pub mu0: f64,
    pub max_iter: usize,
    /// Convergence threshold on the step norm ‖ΔT‖.
    pub tol: f64,
    /// Damping ceiling; a singular system past this aborts.
    pub max_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { mu0: 1e-4, max_iter: 50, tol: 1e-7, max_damping: 1e8 }
    }
}

#[derive(Clone, Debug)]
pub struct LmResult {
    pub poses: Vec<Se3>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub eigen_fallbacks: usize,
}

/// Levenberg-Marquardt over the active poses. One iteration linearizes
/// once; rejected steps re-solve the same system with μ tripled, accepted
/// steps divide μ by 3. Terminates when the solved step norm drops below
/// `tol` or after `max_iter` linearizations.
pub fn lm_solve(problem: &BAProblem, opts: &LmOptions) -> Result<LmResult> {
    let active = problem.active_indices();
    let mut work = problem.clone();
    let initial_cost = plane_cost(&work);
    let mut result = LmResult {
        poses: work.poses.clone(),
        initial_cost,
        final_cost: initial_cost,
        iterations: 0,
        converged: true,
        eigen_fallbacks: 0,
    };
    if active.is_empty() || work.features.is_empty() {
        return Ok(result);
    }
    let na = 6 * active.len();
    let mut mu = opts.mu0;
    let mut cost = initial_cost;

    for iter in 1..=opts.max_iter {
        result.iterations = iter;
        let d = derivatives(&work);
        result.eigen_fallbacks = result.eigen_fallbacks.max(d.eigen_fallbacks);
        cost = d.cost;
        let mut h_a = DMatrix::zeros(na, na);
        let mut g_a = DVector::zeros(na);
        for (r, &pr) in active.iter().enumerate() {
            for m in 0..6 {
                g_a[6 * r + m] = d.grad[6 * pr + m];
            }
            for (c, &pc) in active.iter().enumerate() {
                for m in 0..6 {
                    for q in 0..6 {
                        h_a[(6 * r + m, 6 * c + q)] = d.hessian[(6 * pr + m, 6 * pc + q)];
                    }
                }
            }
        }

        // μ search on a fixed linearization.
        let mut accepted = false;
        loop {
            let mut damped = h_a.clone();
            for i in 0..na {
                damped[(i, i)] += mu;
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 3.0;
                if mu > opts.max_damping {
                    return Err(CoreError::DegenerateHessian { max_damping: opts.max_damping });
                }
                continue;
            };
            let step = chol.solve(&(-&g_a));
            let step_norm = step.norm();
            let trial: Vec<Se3> = active
                .iter()
                .enumerate()
                .map(|(r, &p)| {
                    let xi = step.fixed_rows::<6>(6 * r).into_owned();
                    work.poses[p].compose(&Se3::exp(&xi))
                })
                .collect();
            let mut trial_problem = work.clone();
            for (r, &p) in active.iter().enumerate() {
                trial_problem.poses[p] = trial[r];
            }
            let trial_cost = plane_cost(&trial_problem);
            if trial_cost < cost {
                work = trial_problem;
                cost = trial_cost;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
            }
            if step_norm < opts.tol {
                result.poses = work.poses;
                result.final_cost = cost;
                result.converged = true;
                return Ok(result);
            }
            if accepted {
                break;
            }
            mu *= 3.0;
            // Far past the damping ceiling the step is gradient descent
            // with a vanishing length; if it still fails to descend the
            // iterate is numerically stuck.
            if mu > opts.max_damping * 1e4 {
                result.poses = work.poses;
                result.final_cost = cost;
                result.converged = false;
                return Ok(result);
            }
        }
    }
    result.poses = work.poses;
    result.final_cost = cost;
    result.converged = false;
    Ok(result)
}
