//! Synthetic plane-world fixtures shared by tests and benchmarks.

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

use crate::geom::Se3;

use super::{cluster_coordinate, BAProblem, FeatureAssociation};

/// Axis-aligned rectangular patch of a plane, for sampling observations.
struct Face {
    normal: Vector3<f64>,
    offset: f64,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    half1: f64,
    half2: f64,
}

impl Face {
    fn sample(&self, rng: &mut impl Rng) -> Vector3<f64> {
        self.normal * self.offset
            + self.e1 * rng.gen_range(-self.half1..self.half1)
            + self.e2 * rng.gen_range(-self.half2..self.half2)
    }
}

fn box_faces(hx: f64, hy: f64, hz: f64) -> Vec<Face> {
    vec![
        Face { normal: Vector3::x(), offset: hx, e1: Vector3::y(), e2: Vector3::z(), half1: hy, half2: hz },
        Face { normal: Vector3::x(), offset: -hx, e1: Vector3::y(), e2: Vector3::z(), half1: hy, half2: hz },
        Face { normal: Vector3::y(), offset: hy, e1: Vector3::x(), e2: Vector3::z(), half1: hx, half2: hz },
        Face { normal: Vector3::y(), offset: -hy, e1: Vector3::x(), e2: Vector3::z(), half1: hx, half2: hz },
        Face { normal: Vector3::z(), offset: hz, e1: Vector3::x(), e2: Vector3::y(), half1: hx, half2: hy },
        Face { normal: Vector3::z(), offset: -hz, e1: Vector3::x(), e2: Vector3::y(), half1: hx, half2: hy },
    ]
}

/// A six-plane room observed from `n_poses` viewpoints on an interior arc.
/// Returns the problem at ground truth (gauge on the first pose) plus the
/// ground-truth poses. `sigma` adds isotropic per-point sensor noise.
pub fn room_problem(seed: u64, n_poses: usize, points_per_face: usize, sigma: f64) -> (BAProblem, Vec<Se3>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let faces = box_faces(4.0, 3.0, 1.5);
    let poses: Vec<Se3> = (0..n_poses)
        .map(|i| {
            let phi = i as f64 / n_poses.max(1) as f64 * std::f64::consts::TAU * 0.75;
            let xi = Vector6::new(
                0.0,
                0.0,
                phi * 0.5,
                2.0 * phi.cos(),
                1.5 * phi.sin(),
                0.2 * (i as f64 * 0.7).sin(),
            );
            Se3::exp(&xi)
        })
        .collect();
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("valid sigma");
    let features = faces
        .iter()
        .enumerate()
        .map(|(fid, face)| {
            let observations = poses
                .iter()
                .enumerate()
                .map(|(j, pose)| {
                    let inv = pose.inverse();
                    let pts: Vec<Vector3<f64>> = (0..points_per_face)
                        .map(|_| {
                            let mut q = face.sample(&mut rng);
                            if sigma > 0.0 {
                                q += Vector3::from_fn(|_, _| noise.sample(&mut rng));
                            }
                            inv.transform_point(&q)
                        })
                        .collect();
                    (j, cluster_coordinate(&pts))
                })
                .collect();
            FeatureAssociation { feature_id: fid as u64, observations }
        })
        .collect();
    let frozen = vec![false; n_poses];
    let problem = BAProblem::new(poses.clone(), features, frozen, true).expect("valid problem");
    (problem, poses)
}

/// Three mutually orthogonal planes seen from `n_poses` poses, first pose
/// frozen. Geometry (including point placement) is a function of
/// `geom_seed` alone; `noise_seed` drives only the additive noise, so
/// Monte Carlo redraws share the same underlying instance.
pub fn orthogonal_planes_problem(
    geom_seed: u64,
    noise_seed: u64,
    n_poses: usize,
    points_per_plane: usize,
    sigma: f64,
) -> (BAProblem, Vec<Se3>) {
    let mut grng = ChaCha8Rng::seed_from_u64(geom_seed.wrapping_mul(0x2545_f491).wrapping_add(7));
    let mut nrng = ChaCha8Rng::seed_from_u64(noise_seed.wrapping_mul(0x0b97_3cb5).wrapping_add(3));
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("valid sigma");
    let faces = [
        Face { normal: Vector3::x(), offset: 3.0, e1: Vector3::y(), e2: Vector3::z(), half1: 2.0, half2: 2.0 },
        Face { normal: Vector3::y(), offset: 3.0, e1: Vector3::x(), e2: Vector3::z(), half1: 2.0, half2: 2.0 },
        Face { normal: Vector3::z(), offset: 0.0, e1: Vector3::x(), e2: Vector3::y(), half1: 2.0, half2: 2.0 },
    ];
    let poses: Vec<Se3> = (0..n_poses)
        .map(|i| {
            let xi = Vector6::new(
                grng.gen_range(-0.2..0.2),
                grng.gen_range(-0.2..0.2),
                grng.gen_range(-0.2..0.2),
                grng.gen_range(-1.0..1.0),
                grng.gen_range(-1.0..1.0),
                1.0 + 0.2 * i as f64,
            );
            Se3::exp(&xi)
        })
        .collect();
    let features = faces
        .iter()
        .enumerate()
        .map(|(fid, face)| {
            let observations = poses
                .iter()
                .enumerate()
                .map(|(j, pose)| {
                    let inv = pose.inverse();
                    let pts: Vec<Vector3<f64>> = (0..points_per_plane)
                        .map(|_| {
                            let mut q = face.sample(&mut grng);
                            if sigma > 0.0 {
                                q += Vector3::from_fn(|_, _| noise.sample(&mut nrng));
                            }
                            inv.transform_point(&q)
                        })
                        .collect();
                    (j, cluster_coordinate(&pts))
                })
                .collect();
            FeatureAssociation { feature_id: fid as u64, observations }
        })
        .collect();
    let mut frozen = vec![false; n_poses];
    frozen[0] = true;
    let problem = BAProblem::new(poses.clone(), features, frozen, false).expect("valid problem");
    (problem, poses)
}

/// Applies a rotation of exactly `rot_rad` about a random axis and a
/// translation of exactly `trans_m` in a random direction to every pose.
pub fn perturb_poses(poses: &[Se3], rot_rad: f64, trans_m: f64, rng: &mut impl Rng) -> Vec<Se3> {
    poses
        .iter()
        .map(|p| {
            let axis: [f64; 3] = UnitSphere.sample(rng);
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let xi = Vector6::new(
                axis[0] * rot_rad,
                axis[1] * rot_rad,
                axis[2] * rot_rad,
                dir[0] * trans_m,
                dir[1] * trans_m,
                dir[2] * trans_m,
            );
            p.compose(&Se3::exp(&xi))
        })
        .collect()
}

/// Worst per-pose error between `est` and `gt` after removing the global
/// gauge freedom using the first pose pair. Returns (translation m,
/// rotation rad).
pub fn gauge_alignment_error(gt: &[Se3], est: &[Se3]) -> (f64, f64) {
    assert_eq!(gt.len(), est.len());
    assert!(!gt.is_empty());
    let g = est[0].compose(&gt[0].inverse());
    let mut worst_t = 0.0f64;
    let mut worst_r = 0.0f64;
    for (gt_p, est_p) in gt.iter().zip(est) {
        let aligned = g.compose(gt_p);
        let err = aligned.delta_to(est_p);
        worst_t = worst_t.max(err.translation.norm());
        worst_r = worst_r.max(err.rotation_angle());
    }
    (worst_t, worst_r)
}
