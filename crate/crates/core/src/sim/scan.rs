use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{Frame, PointCloud, Se3};
use crate::sim::world::PlaneSet;
use crate::Result;

const RAY_T_MIN: f64 = 0.05;
const RAY_T_MAX: f64 = 200.0;

/// Möller–Trumbore ray/triangle intersection. Returns the ray parameter t
/// for origin + t * dir, or None on miss.
fn ray_triangle(origin: &Vector3<f64>, dir: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > RAY_T_MIN && t < RAY_T_MAX).then_some(t)
}

/// Deterministic near-uniform directions on the unit sphere (Fibonacci
/// lattice). Independent of the RNG so the ray pattern is a pure function
/// of the count.
pub(crate) fn sphere_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    (0..n)
        .map(|i| {
            let z = if n == 1 { 0.0 } else { 1.0 - 2.0 * (i as f64 + 0.5) / n as f64 };
            let r = (1.0 - z * z).max(0.0).sqrt();
            let th = golden * i as f64;
            Vector3::new(r * th.cos(), r * th.sin(), z)
        })
        .collect()
}

/// Simulates one omnidirectional range scan from `pose` (sensor in world).
/// Rays that hit no patch produce no point. Gaussian noise with standard
/// deviation `sigma` is added per axis in the sensor frame; the returned
/// cloud is in the sensor frame.
pub fn simulate_scan(
    world: &PlaneSet,
    pose: &Se3,
    rays: usize,
    sigma: f64,
    seed: u64,
) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = if sigma > 0.0 { Some(Normal::new(0.0, sigma).expect("sigma is finite")) } else { None };
    let origin = pose.translation;
    let inv = pose.inverse();
    let mut points = Vec::new();
    for dir_sensor in sphere_directions(rays) {
        let dir = pose.rotation * dir_sensor;
        let mut best: Option<f64> = None;
        for plane in &world.planes {
            for tri in plane.triangles() {
                if let Some(t) = ray_triangle(&origin, &dir, &tri) {
                    if best.map_or(true, |b| t < b) {
                        best = Some(t);
                    }
                }
            }
        }
        let Some(t) = best else { continue };
        let mut p = inv.transform_point(&(origin + dir * t));
        if let Some(n) = &noise {
            p += Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        }
        points.push(p);
    }
    Ok(PointCloud::from_points(points, Frame::Sensor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::{generate_world, WorldKind};
    use nalgebra::Matrix3;

    fn mid_corridor_pose() -> Se3 {
        Se3::new(Matrix3::identity(), Vector3::new(10.0, 0.0, 1.5))
    }

    #[test]
    fn noiseless_points_lie_on_planes() {
        let world = generate_world(WorldKind::Corridor, 20.0, 5).unwrap();
        let pose = mid_corridor_pose();
        let cloud = simulate_scan(&world, &pose, 500, 0.0, 42).unwrap();
        assert!(cloud.len() > 300, "expected most rays to hit, got {}", cloud.len());
        for p in &cloud.points {
            let w = pose.transform_point(p);
            let d = world.nearest_surface_distance(&w);
            assert!(d < 1e-9, "point {w:?} is {d:e} off every surface");
        }
    }

    #[test]
    fn noise_rms_matches_sigma() {
        let world = generate_world(WorldKind::Corridor, 20.0, 5).unwrap();
        let pose = mid_corridor_pose();
        let sigma = 0.01;
        let noisy = simulate_scan(&world, &pose, 10_000, sigma, 7).unwrap();
        // Perpendicular distance to the hit patch is a 1-D projection of
        // isotropic 3-D noise, so its RMS estimates sigma directly.
        let mut sum_sq = 0.0;
        for p in &noisy.points {
            let w = pose.transform_point(p);
            sum_sq += world.nearest_surface_distance(&w).powi(2);
        }
        let rms = (sum_sq / noisy.len() as f64).sqrt();
        assert!((0.008..=0.012).contains(&rms), "rms {rms}");
    }

    #[test]
    fn single_ray_yields_at_most_one_point() {
        let world = generate_world(WorldKind::Corridor, 20.0, 5).unwrap();
        let cloud = simulate_scan(&world, &mid_corridor_pose(), 1, 0.0, 1).unwrap();
        assert!(cloud.len() <= 1);
    }

    #[test]
    fn same_seed_bit_identical() {
        let world = generate_world(WorldKind::Garage, 24.0, 2).unwrap();
        let pose = Se3::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 1.2));
        let a = simulate_scan(&world, &pose, 2000, 0.02, 9).unwrap();
        let b = simulate_scan(&world, &pose, 2000, 0.02, 9).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn rays_outside_world_miss() {
        let world = generate_world(WorldKind::Corridor, 20.0, 5).unwrap();
        // 500 m away from the corridor, far past the ray range cap.
        let pose = Se3::new(Matrix3::identity(), Vector3::new(500.0, 500.0, 500.0));
        let cloud = simulate_scan(&world, &pose, 100, 0.0, 3);
        // Empty clouds are an error from the constructor side; a scan with
        // zero returns is still a valid (empty) result here.
        match cloud {
            Ok(c) => assert!(c.is_empty()),
            Err(e) => panic!("empty scan should not error: {e}"),
        }
    }

    #[test]
    fn directions_are_unit_and_spread() {
        let dirs = sphere_directions(1000);
        let mut mean = Vector3::zeros();
        for d in &dirs {
            assert!((d.norm() - 1.0).abs() < 1e-12);
            mean += d;
        }
        mean /= 1000.0;
        assert!(mean.norm() < 0.01, "lattice mean {mean:?}");
    }
}
