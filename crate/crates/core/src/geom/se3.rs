use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3, Vector6};

/// Tangent vector of SE(3), ordered `[rotation; translation]`.
pub type Twist = Vector6<f64>;

/// Orthogonality defect above which a rotation matrix gets re-projected
/// onto SO(3). Composition chains stay well below this in exact arithmetic;
/// the projection only fires when float drift accumulates.
const ORTHO_DEFECT_TOL: f64 = 1e-12;

const SMALL_ANGLE: f64 = 1e-9;

/// A rigid transform. The rotation is kept orthonormal with det +1; every
/// constructor and `compose` re-projects via polar decomposition when the
/// defect exceeds 1e-12.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Se3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3 {
    pub fn identity() -> Self {
        Se3 { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a transform, re-orthonormalizing the rotation if needed.
    /// Panics if `rotation` is not close to a proper rotation (det ≤ 0 or
    /// defect worse than 1e-3): that is a logic error, not float drift.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let defect = ortho_defect(&rotation);
        assert!(
            defect < 1e-3 && rotation.determinant() > 0.0,
            "matrix is not a rotation (defect {defect:.3e}, det {})",
            rotation.determinant()
        );
        let rotation = if defect > ORTHO_DEFECT_TOL { polar_project(&rotation) } else { rotation };
        Se3 { rotation, translation }
    }

    pub fn from_quat_trans(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Se3 { rotation: q.to_rotation_matrix().into_inner(), translation: t }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// `self · other`, re-orthonormalized when float drift shows.
    pub fn compose(&self, other: &Se3) -> Se3 {
        let mut rotation = self.rotation * other.rotation;
        if ortho_defect(&rotation) > ORTHO_DEFECT_TOL {
            rotation = polar_project(&rotation);
        }
        Se3 { rotation, translation: self.rotation * other.translation + self.translation }
    }

    pub fn inverse(&self) -> Se3 {
        let rt = self.rotation.transpose();
        Se3 { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn as_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Exponential map. `xi = [omega; rho]`, rotation part first.
    pub fn exp(xi: &Twist) -> Se3 {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let rho = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = omega.norm();
        let k = skew(&omega);
        let k2 = k * k;
        let (a, b, c) = if theta < SMALL_ANGLE {
            // sin θ/θ, (1−cos θ)/θ², (θ−sin θ)/θ³ by Taylor expansion
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            let t2 = theta * theta;
            ((theta.sin()) / theta, (1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
        };
        let rotation = Matrix3::identity() + k * a + k2 * b;
        let v = Matrix3::identity() + k * b + k2 * c;
        Se3 { rotation, translation: v * rho }
    }

    /// Logarithm map, inverse of `exp`. Rotation angle is taken in [0, π].
    pub fn log(&self) -> Twist {
        let omega = so3_log(&self.rotation);
        let theta = omega.norm();
        let k = skew(&omega);
        let k2 = k * k;
        // V⁻¹ = I − K/2 + (1/θ² − (1+cos θ)/(2θ sin θ)) K²
        let coef = if theta < SMALL_ANGLE {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - k * 0.5 + k2 * coef;
        let rho = v_inv * self.translation;
        Vector6::new(omega[0], omega[1], omega[2], rho[0], rho[1], rho[2])
    }

    /// Rotation angle in radians, in [0, π].
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Relative transform taking `self` to `other`: self⁻¹ · other.
    pub fn delta_to(&self, other: &Se3) -> Se3 {
        self.inverse().compose(other)
    }
}

impl std::ops::Mul for Se3 {
    type Output = Se3;
    fn mul(self, rhs: Se3) -> Se3 {
        self.compose(&rhs)
    }
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

fn ortho_defect(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Nearest rotation in Frobenius norm, via SVD polar decomposition.
fn polar_project(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = c.acos();
    if theta < SMALL_ANGLE {
        // ω ≈ vee(R − Rᵀ)/2 for small angles
        return Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)])
            * 0.5;
    }
    if (std::f64::consts::PI - theta) < 1e-6 {
        // Near π the antisymmetric part vanishes; recover the axis from
        // the symmetric part R + I = 2(aaᵀ)(1+cos θ)/... ≈ aaᵀ·2.
        let m = (r + Matrix3::identity()) * 0.5;
        let diag = Vector3::new(m[(0, 0)], m[(1, 1)], m[(2, 2)]);
        let i = diag.imax();
        let mut axis = Vector3::zeros();
        axis[i] = diag[i].max(0.0).sqrt();
        if axis[i] > 0.0 {
            for j in 0..3 {
                if j != i {
                    axis[j] = m[(i, j)] / axis[i];
                }
            }
        }
        let axis = axis.normalize();
        // Fix the sign using the antisymmetric remainder.
        let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        let axis = if v.dot(&axis) < 0.0 { -axis } else { axis };
        return axis * theta;
    }
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    v * (theta / (2.0 * theta.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_se3(rng: &mut impl Rng) -> Se3 {
        let xi = Twist::from_fn(|i, _| {
            if i < 3 {
                rng.gen_range(-2.5..2.5)
            } else {
                rng.gen_range(-10.0..10.0)
            }
        });
        Se3::exp(&xi)
    }

    /// Matrix exponential by truncated series, independent of `Se3::exp`.
    fn expm_series(a: &Matrix4<f64>) -> Matrix4<f64> {
        let mut sum = Matrix4::identity();
        let mut term = Matrix4::identity();
        for k in 1..30 {
            term = term * a / (k as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn identity_compose_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_se3(&mut rng);
        let out = Se3::identity().compose(&t);
        assert_relative_eq!(out.as_matrix(), t.as_matrix(), epsilon = 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t = random_se3(&mut rng);
            let i = t.compose(&t.inverse());
            assert_relative_eq!(i.as_matrix(), Matrix4::identity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_matches_homogeneous_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_se3(&mut rng);
            let b = random_se3(&mut rng);
            let got = a.compose(&b).as_matrix();
            let want = a.as_matrix() * b.as_matrix();
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn exp_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let xi = Twist::from_fn(|i, _| {
                if i < 3 {
                    rng.gen_range(-2.0..2.0)
                } else {
                    rng.gen_range(-5.0..5.0)
                }
            });
            let mut a = Matrix4::zeros();
            a.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&Vector3::new(xi[0], xi[1], xi[2])));
            a.fixed_view_mut::<3, 1>(0, 3)
                .copy_from(&Vector3::new(xi[3], xi[4], xi[5]));
            let want = expm_series(&a);
            assert_relative_eq!(Se3::exp(&xi).as_matrix(), want, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t = random_se3(&mut rng);
            let back = Se3::exp(&t.log());
            assert_relative_eq!(back.as_matrix(), t.as_matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn log_handles_rotations_near_pi() {
        for axis in [Vector3::x(), Vector3::y(), Vector3::new(1.0, 2.0, -0.5).normalize()] {
            let angle = std::f64::consts::PI - 1e-9;
            let xi = Twist::new(
                axis[0] * angle,
                axis[1] * angle,
                axis[2] * angle,
                0.3,
                -0.2,
                1.0,
            );
            let t = Se3::exp(&xi);
            let back = Se3::exp(&t.log());
            assert_relative_eq!(back.as_matrix(), t.as_matrix(), epsilon = 1e-6);
        }
    }

    #[test]
    fn transform_is_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let t = random_se3(&mut rng);
            let p = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
            let q = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
            let d0 = (p - q).norm();
            let d1 = (t.transform_point(&p) - t.transform_point(&q)).norm();
            assert_relative_eq!(d0, d1, epsilon = 1e-9);
        }
    }

    #[test]
    fn long_compose_chain_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut acc = Se3::identity();
        for _ in 0..20_000 {
            acc = acc.compose(&random_se3(&mut rng));
        }
        let defect = (acc.rotation.transpose() * acc.rotation - Matrix3::identity()).norm();
        assert!(defect < 1e-9, "defect {defect:e}");
        assert!((acc.rotation.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let t = random_se3(&mut rng);
            let q = t.quaternion();
            let back = Se3::from_quat_trans(&q, t.translation);
            assert_relative_eq!(back.as_matrix(), t.as_matrix(), epsilon = 1e-12);
        }
    }
}
