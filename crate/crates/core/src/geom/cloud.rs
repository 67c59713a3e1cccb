use nalgebra::{Matrix3, Vector3};

use crate::{CoreError, Result};

use super::Se3;

/// Coordinate frame a cloud's points are expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Sensor,
    World,
}

/// Points in a named frame, with optional per-point covariances used by
/// plane-to-plane registration.
#[derive(Clone, Debug)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: Frame,
    pub covariances: Option<Vec<Matrix3<f64>>>,
}

impl PointCloud {
    /// Validates finiteness and, when covariances are given, that they match
    /// the point count and are symmetric PSD within 1e-9.
    pub fn new(
        points: Vec<Vector3<f64>>,
        frame: Frame,
        covariances: Option<Vec<Matrix3<f64>>>,
    ) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(CoreError::DegeneratePointSet(format!(
                    "non-finite coordinate at point {i}"
                )));
            }
        }
        if let Some(covs) = &covariances {
            if covs.len() != points.len() {
                return Err(CoreError::LengthMismatch {
                    context: "per-point covariances",
                    left: covs.len(),
                    right: points.len(),
                });
            }
            for (i, c) in covs.iter().enumerate() {
                if (c - c.transpose()).norm() > 1e-9 {
                    return Err(CoreError::DegeneratePointSet(format!(
                        "covariance {i} not symmetric"
                    )));
                }
                let eig = c.symmetric_eigenvalues();
                if eig.min() < -1e-9 {
                    return Err(CoreError::DegeneratePointSet(format!(
                        "covariance {i} not PSD (min eigenvalue {:e})",
                        eig.min()
                    )));
                }
            }
        }
        Ok(PointCloud { points, frame, covariances })
    }

    pub fn from_points(points: Vec<Vector3<f64>>, frame: Frame) -> Self {
        PointCloud { points, frame, covariances: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Applies a rigid transform to points (and covariances by congruence),
    /// relabeling the frame.
    pub fn transformed(&self, xf: &Se3, frame: Frame) -> PointCloud {
        let points = self.points.iter().map(|p| xf.transform_point(p)).collect();
        let covariances = self.covariances.as_ref().map(|covs| {
            covs.iter().map(|c| xf.rotation * c * xf.rotation.transpose()).collect()
        });
        PointCloud { points, frame, covariances }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64)
    }

    /// Voxel-grid thinning: one centroid per occupied cell, deterministic
    /// cell order. Per-point covariances do not survive averaging and are
    /// dropped.
    pub fn voxel_downsample(&self, voxel: f64) -> PointCloud {
        assert!(voxel > 0.0, "voxel size must be positive");
        let mut cells: std::collections::BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> =
            std::collections::BTreeMap::new();
        for p in &self.points {
            let key = (
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            );
            let e = cells.entry(key).or_insert((Vector3::zeros(), 0));
            e.0 += p;
            e.1 += 1;
        }
        let points = cells.values().map(|(sum, n)| sum / *n as f64).collect();
        PointCloud { points, frame: self.frame, covariances: None }
    }
}
