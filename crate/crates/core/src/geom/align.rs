use nalgebra::{Matrix3, Vector3};

use crate::{CoreError, Result};

use super::{Pose, Se3};

/// Principal axis of a point set: the top eigenvector of the sample
/// covariance, plus all three eigenvalues sorted λ1 ≥ λ2 ≥ λ3.
///
/// The sign is fixed so the axis has non-negative dot product with
/// (1,1,1); an exact tie falls back to +x, then +y, then +z.
pub fn pca_principal_axis(points: &[Vector3<f64>]) -> Result<(Vector3<f64>, [f64; 3])> {
    if points.len() < 2 {
        return Err(CoreError::DegeneratePointSet("fewer than 2 points".into()));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;
    if cov.norm() < 1e-24 {
        return Err(CoreError::DegeneratePointSet("all points coincident".into()));
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambdas = [
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    ];
    let mut axis: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    axis.normalize_mut();
    axis = fix_sign(axis);
    Ok((axis, lambdas))
}

fn fix_sign(axis: Vector3<f64>) -> Vector3<f64> {
    const TIE: f64 = 1e-12;
    let d = axis.sum();
    if d.abs() > TIE {
        return if d < 0.0 { -axis } else { axis };
    }
    for i in 0..3 {
        if axis[i].abs() > TIE {
            return if axis[i] < 0.0 { -axis } else { axis };
        }
    }
    axis
}

/// Rigid transform S minimizing Σ‖gt_i − S·est_i‖² over the pose
/// translations (Kabsch/Umeyama without scale).
pub fn umeyama_align(est: &[Pose], gt: &[Pose]) -> Result<Se3> {
    let e: Vec<Vector3<f64>> = est.iter().map(|p| p.xf.translation).collect();
    let g: Vec<Vector3<f64>> = gt.iter().map(|p| p.xf.translation).collect();
    umeyama_points(&e, &g)
}

pub fn umeyama_points(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Se3> {
    if est.len() != gt.len() {
        return Err(CoreError::LengthMismatch {
            context: "trajectory alignment",
            left: est.len(),
            right: gt.len(),
        });
    }
    if est.len() < 3 {
        return Err(CoreError::AlignmentFailed("need at least 3 pose pairs".into()));
    }
    let n = est.len() as f64;
    let ce = est.iter().sum::<Vector3<f64>>() / n;
    let cg = gt.iter().sum::<Vector3<f64>>() / n;
    let mut w = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        w += (g - cg) * (e - ce).transpose();
    }
    let svd = w.svd(true, true);
    let sv = svd.singular_values;
    if sv[0] < 1e-18 || sv[1] < 1e-9 * sv[0] {
        return Err(CoreError::AlignmentFailed("alignment ill-conditioned".into()));
    }
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let translation = cg - rotation * ce;
    Ok(Se3::new(rotation, translation))
}
