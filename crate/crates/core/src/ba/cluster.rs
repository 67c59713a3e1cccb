use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::Se3;

/// Second-moment summary of a point set: P = Σ p pᵀ, v = Σ p, N = count.
/// Clusters add elementwise over disjoint sets and transform by the
/// homogeneous congruence T·Ĉ·Tᵀ, so per-pose feature statistics can be
/// precomputed once in the sensor frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCluster {
    pub p: Matrix3<f64>,
    pub v: Vector3<f64>,
    pub n: usize,
}

/// Builds the cluster summary of a point list.
pub fn cluster_coordinate(points: &[Vector3<f64>]) -> PointCluster {
    let mut c = PointCluster::zero();
    for pt in points {
        c.p += pt * pt.transpose();
        c.v += pt;
        c.n += 1;
    }
    c
}

impl PointCluster {
    pub fn zero() -> Self {
        PointCluster { p: Matrix3::zeros(), v: Vector3::zeros(), n: 0 }
    }

    pub fn add(&self, other: &PointCluster) -> PointCluster {
        PointCluster { p: self.p + other.p, v: self.v + other.v, n: self.n + other.n }
    }

    /// T·Ĉ·Tᵀ in closed form.
    pub fn transformed(&self, xf: &Se3) -> PointCluster {
        let r = &xf.rotation;
        let t = &xf.translation;
        let rv = r * self.v;
        let p = r * self.p * r.transpose()
            + rv * t.transpose()
            + t * rv.transpose()
            + t * t.transpose() * self.n as f64;
        PointCluster { p, v: rv + t * self.n as f64, n: self.n }
    }

    /// The 4×4 homogeneous form [P v; vᵀ N].
    pub fn as_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.p);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m.fixed_view_mut::<1, 3>(3, 0).copy_from(&self.v.transpose());
        m[(3, 3)] = self.n as f64;
        m
    }

    pub fn from_matrix4(m: &Matrix4<f64>, n: usize) -> PointCluster {
        PointCluster {
            p: m.fixed_view::<3, 3>(0, 0).into(),
            v: m.fixed_view::<3, 1>(0, 3).into(),
            n,
        }
    }

    /// Sample scatter A(Ĉ) = P/N − v vᵀ/N². Requires N > 0.
    pub fn scatter(&self) -> Matrix3<f64> {
        debug_assert!(self.n > 0);
        let n = self.n as f64;
        self.p / n - self.v * self.v.transpose() / (n * n)
    }

    /// The 9 free entries [P11 P12 P13 P22 P23 P33 v1 v2 v3].
    pub fn entries(&self) -> [f64; 9] {
        [
            self.p[(0, 0)],
            self.p[(0, 1)],
            self.p[(0, 2)],
            self.p[(1, 1)],
            self.p[(1, 2)],
            self.p[(2, 2)],
            self.v[0],
            self.v[1],
            self.v[2],
        ]
    }

    /// Rebuilds the cluster from the 9 free entries, keeping P symmetric.
    pub fn from_entries(e: &[f64; 9], n: usize) -> PointCluster {
        PointCluster {
            p: Matrix3::new(e[0], e[1], e[2], e[1], e[3], e[4], e[2], e[4], e[5]),
            v: Vector3::new(e[6], e[7], e[8]),
            n,
        }
    }
}

/// First-order covariance of the 9 cluster entries when every point gets
/// iid isotropic noise of standard deviation `sigma` per axis.
///
/// With B_k = ∂(entries)/∂p_k the covariance is σ²·Σ_k B_k B_kᵀ; every
/// entry of that sum is itself a first or second moment, so it assembles
/// in closed form from (P, v, N).
pub fn cluster_noise_covariance(c: &PointCluster, sigma: f64) -> SMatrix<f64, 9, 9> {
    let p = &c.p;
    let v = &c.v;
    let n = c.n as f64;
    let mut m = SMatrix::<f64, 9, 9>::zeros();
    // P-entry block (indices 0..6 map to P11 P12 P13 P22 P23 P33).
    let pp = [
        [
            4.0 * p[(0, 0)],
            2.0 * p[(0, 1)],
            2.0 * p[(0, 2)],
            0.0,
            0.0,
            0.0,
        ],
        [
            2.0 * p[(0, 1)],
            p[(1, 1)] + p[(0, 0)],
            p[(1, 2)],
            2.0 * p[(0, 1)],
            p[(0, 2)],
            0.0,
        ],
        [
            2.0 * p[(0, 2)],
            p[(1, 2)],
            p[(2, 2)] + p[(0, 0)],
            0.0,
            p[(0, 1)],
            2.0 * p[(0, 2)],
        ],
        [0.0, 2.0 * p[(0, 1)], 0.0, 4.0 * p[(1, 1)], 2.0 * p[(1, 2)], 0.0],
        [
            0.0,
            p[(0, 2)],
            p[(0, 1)],
            2.0 * p[(1, 2)],
            p[(2, 2)] + p[(1, 1)],
            2.0 * p[(1, 2)],
        ],
        [0.0, 0.0, 2.0 * p[(0, 2)], 0.0, 2.0 * p[(1, 2)], 4.0 * p[(2, 2)]],
    ];
    for (i, row) in pp.iter().enumerate() {
        for (j, val) in row.iter().enumerate() {
            m[(i, j)] = *val;
        }
    }
    // P-v cross block.
    let pv = [
        [2.0 * v[0], 0.0, 0.0],
        [v[1], v[0], 0.0],
        [v[2], 0.0, v[0]],
        [0.0, 2.0 * v[1], 0.0],
        [0.0, v[2], v[1]],
        [0.0, 0.0, 2.0 * v[2]],
    ];
    for (i, row) in pv.iter().enumerate() {
        for (j, val) in row.iter().enumerate() {
            m[(i, 6 + j)] = *val;
            m[(6 + j, i)] = *val;
        }
    }
    for i in 0..3 {
        m[(6 + i, 6 + i)] = n;
    }
    m * (sigma * sigma)
}
