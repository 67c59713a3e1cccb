use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};
use rayon::prelude::*;

use crate::geom::Se3;

use super::{BAProblem, FeatureAssociation, EIGEN_GAP_MIN, MIN_FEATURE_POINTS};

/// Gradient and Hessian of the plane cost w.r.t. right-multiplicative pose
/// perturbations, rotation-first `[ω; t]`, 6 entries per pose. Frozen
/// poses have their rows and columns zeroed.
#[derive(Clone, Debug)]
pub struct BADerivatives {
    pub grad: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub cost: f64,
    /// Features whose λ2−λ3 gap collapsed below 1e-10; they contributed
    /// gradient only.
    pub eigen_fallbacks: usize,
}

/// se(3) generator m of the 4×4 homogeneous action, rotation-first.
fn generator(m: usize) -> Matrix4<f64> {
    let mut g = Matrix4::zeros();
    match m {
        0 => {
            g[(1, 2)] = -1.0;
            g[(2, 1)] = 1.0;
        }
        1 => {
            g[(0, 2)] = 1.0;
            g[(2, 0)] = -1.0;
        }
        2 => {
            g[(0, 1)] = -1.0;
            g[(1, 0)] = 1.0;
        }
        _ => g[(m - 3, 3)] = 1.0,
    }
    g
}

/// Eigen-decomposition of a symmetric 3×3, eigenvalues descending.
pub(crate) fn eigen_desc(a: &Matrix3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let eig = a.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    (
        [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]],
        [
            eig.eigenvectors.column(order[0]).into(),
            eig.eigenvectors.column(order[1]).into(),
            eig.eigenvectors.column(order[2]).into(),
        ],
    )
}

/// World-frame scatter over one feature's observations: A(Σ_j T_j Ĉ_j T_jᵀ).
fn assemble_scatter(
    poses: &[Se3],
    feature: &FeatureAssociation,
) -> Option<(Matrix3<f64>, Vector3<f64>, f64)> {
    let total = feature.total_points();
    if total < MIN_FEATURE_POINTS {
        eprintln!(
            "warning: feature {} has {total} points (< {MIN_FEATURE_POINTS}), excluded",
            feature.feature_id
        );
        return None;
    }
    let mut sum = super::PointCluster::zero();
    for (j, c) in &feature.observations {
        sum = sum.add(&c.transformed(&poses[*j]));
    }
    let n = sum.n as f64;
    Some((sum.scatter(), sum.v, n))
}

/// Sum over features of the smallest scatter eigenvalue (the squared
/// plane thickness times the point count share). Features with fewer
/// than 3 total points are excluded with a warning.
pub fn plane_cost(problem: &BAProblem) -> f64 {
    problem
        .features
        .par_iter()
        .map(|f| {
            assemble_scatter(&problem.poses, f)
                .map(|(a, _, _)| eigen_desc(&a).0[2])
                .unwrap_or(0.0)
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum()
}

pub(crate) struct FeatureBlock {
    cost: f64,
    /// (pose index, 6-vector) per observation.
    pub(crate) grad: Vec<(usize, [f64; 6])>,
    /// (obs row, obs col, 6×6) for obs-pair blocks, row ≤ col.
    hess: Vec<(usize, usize, [[f64; 6]; 6])>,
    degenerate: bool,
}

pub(crate) fn feature_block(
    poses: &[Se3],
    feature: &FeatureAssociation,
    with_hessian: bool,
) -> Option<FeatureBlock> {
    let (a_mat, v_sum, n) = assemble_scatter(poses, feature)?;
    let (lam, u) = eigen_desc(&a_mat);
    let cost = lam[2];
    let u3 = u[2];
    let k = feature.observations.len();

    // Per (observation, generator): z_k = u_kᵀ A′ u3 and a = u3ᵀ v̇,
    // where A′ = Ṗ/n − (v̇vᵀ + vv̇ᵀ)/n² and Ċ = G_m W + W G_mᵀ with
    // W = T Ĉ Tᵀ and G_m = T ê_m T⁻¹.
    let mut z1 = vec![[0.0; 6]; k];
    let mut z2 = vec![[0.0; 6]; k];
    let mut z3 = vec![[0.0; 6]; k];
    let mut av = vec![[0.0; 6]; k];
    let mut gs: Vec<[Matrix4<f64>; 6]> = Vec::with_capacity(k);
    let mut ws: Vec<Matrix4<f64>> = Vec::with_capacity(k);

    for (o, (j, c)) in feature.observations.iter().enumerate() {
        let t4 = poses[*j].as_matrix();
        let t4_inv = poses[*j].inverse().as_matrix();
        let w = t4 * c.as_matrix4() * t4.transpose();
        let g: [Matrix4<f64>; 6] =
            std::array::from_fn(|m| t4 * generator(m) * t4_inv);
        for m in 0..6 {
            let cdot = g[m] * w + w * g[m].transpose();
            let pdot: Matrix3<f64> = cdot.fixed_view::<3, 3>(0, 0).into();
            let vdot: Vector3<f64> = cdot.fixed_view::<3, 1>(0, 3).into();
            let proj = |uk: &Vector3<f64>| {
                uk.dot(&(pdot * u3)) / n
                    - (uk.dot(&vdot) * v_sum.dot(&u3) + uk.dot(&v_sum) * vdot.dot(&u3))
                        / (n * n)
            };
            z1[o][m] = proj(&u[0]);
            z2[o][m] = proj(&u[1]);
            z3[o][m] = proj(&u3);
            av[o][m] = u3.dot(&vdot);
        }
        gs.push(g);
        ws.push(w);
    }

    let grad: Vec<(usize, [f64; 6])> = feature
        .observations
        .iter()
        .enumerate()
        .map(|(o, (j, _))| (*j, z3[o]))
        .collect();

    if !with_hessian {
        return Some(FeatureBlock { cost, grad, hess: Vec::new(), degenerate: false });
    }

    // Eigen cross terms need a clean λ2−λ3 gap; without it the feature
    // contributes gradient only.
    if lam[1] - lam[2] < EIGEN_GAP_MIN {
        eprintln!(
            "warning: feature {} has λ2−λ3 = {:.3e}; Hessian term dropped",
            feature.feature_id,
            lam[1] - lam[2]
        );
        return Some(FeatureBlock { cost, grad, hess: Vec::new(), degenerate: true });
    }

    let inv_gap1 = 1.0 / (lam[2] - lam[0]);
    let inv_gap2 = 1.0 / (lam[2] - lam[1]);
    let mut hess = Vec::with_capacity(k * (k + 1) / 2);
    for o in 0..k {
        for l in o..k {
            let mut block = [[0.0; 6]; 6];
            for m in 0..6 {
                for q in 0..6 {
                    if l == o && q < m {
                        continue;
                    }
                    let mut val = 2.0 * (z1[o][m] * z1[l][q] * inv_gap1
                        + z2[o][m] * z2[l][q] * inv_gap2)
                        - 2.0 / (n * n) * av[o][m] * av[l][q];
                    if l == o {
                        // Same-pose curvature of the cluster itself:
                        // C̈ = S̃W + WS̃ᵀ + G_mWG_qᵀ + G_qWG_mᵀ,
                        // S̃ = (G_mG_q + G_qG_m)/2.
                        let g = &gs[o];
                        let w = &ws[o];
                        let s = (g[m] * g[q] + g[q] * g[m]) * 0.5;
                        let cddot = s * w
                            + w * s.transpose()
                            + g[m] * w * g[q].transpose()
                            + g[q] * w * g[m].transpose();
                        let pdd: Matrix3<f64> = cddot.fixed_view::<3, 3>(0, 0).into();
                        let vdd: Vector3<f64> = cddot.fixed_view::<3, 1>(0, 3).into();
                        val += u3.dot(&(pdd * u3)) / n
                            - 2.0 * u3.dot(&vdd) * v_sum.dot(&u3) / (n * n);
                    }
                    block[m][q] = val;
                    if l == o {
                        block[q][m] = val;
                    }
                }
            }
            hess.push((o, l, block));
        }
    }
    Some(FeatureBlock { cost, grad, hess, degenerate: false })
}

/// Analytic gradient and Hessian of `plane_cost` at the problem's poses.
/// Features are processed in parallel and reduced in feature order, so the
/// result is bit-stable across thread counts.
pub fn derivatives(problem: &BAProblem) -> BADerivatives {
    let mp = problem.poses.len();
    let dim = 6 * mp;
    let blocks: Vec<Option<FeatureBlock>> = problem
        .features
        .par_iter()
        .map(|f| feature_block(&problem.poses, f, true))
        .collect();

    let mut grad = DVector::zeros(dim);
    let mut hessian = DMatrix::zeros(dim, dim);
    let mut cost = 0.0;
    let mut eigen_fallbacks = 0;
    for block in blocks.into_iter().flatten() {
        cost += block.cost;
        if block.degenerate {
            eigen_fallbacks += 1;
        }
        let pose_of: Vec<usize> = block.grad.iter().map(|(j, _)| *j).collect();
        for (j, g) in &block.grad {
            for m in 0..6 {
                grad[6 * j + m] += g[m];
            }
        }
        for (o, l, b) in &block.hess {
            let (pj, pl) = (pose_of[*o], pose_of[*l]);
            for m in 0..6 {
                for q in 0..6 {
                    hessian[(6 * pj + m, 6 * pl + q)] += b[m][q];
                    if pj != pl || o != l {
                        hessian[(6 * pl + q, 6 * pj + m)] += b[m][q];
                    }
                }
            }
        }
    }

    for j in problem.frozen_indices() {
        for m in 0..6 {
            let row = 6 * j + m;
            grad[row] = 0.0;
            for c in 0..dim {
                hessian[(row, c)] = 0.0;
                hessian[(c, row)] = 0.0;
            }
        }
    }
    BADerivatives { grad, hessian, cost, eigen_fallbacks }
}
