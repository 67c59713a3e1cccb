use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{Frame, PointCloud, Pose, PoseKey, Se3};
use crate::io;
use crate::loops::LoopClosure;
use crate::sim::candidates::candidates_from_trajectories;
use crate::sim::drift::{inject_drift, DriftModel};
use crate::sim::scan::simulate_scan;
use crate::sim::world::{generate_world, PlaneSet, WorldKind};
use crate::{CoreError, Result};

/// Everything needed to generate one multi-robot session deterministically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionSpec {
    pub robot_count: usize,
    /// Trajectory waypoints per robot; resampled at speed/scan-rate spacing.
    pub waypoints: Vec<Vec<Vector3<f64>>>,
    pub scan_rate_hz: f64,
    pub speed_mps: f64,
    pub rays_per_scan: usize,
    pub sensor_sigma: f64,
    pub drift: DriftModel,
    pub false_loop_ratio: f64,
    pub loop_radius: f64,
    pub world_kind: WorldKind,
    pub world_extent: f64,
    pub seed: u64,
}

impl SessionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.robot_count == 0 {
            return Err(CoreError::InvalidConfig("robot_count must be ≥ 1".into()));
        }
        if self.waypoints.len() != self.robot_count {
            return Err(CoreError::LengthMismatch {
                context: "waypoint lists vs robot_count",
                left: self.waypoints.len(),
                right: self.robot_count,
            });
        }
        if self.waypoints.iter().any(|w| w.len() < 2) {
            return Err(CoreError::InvalidConfig("each robot needs ≥ 2 waypoints".into()));
        }
        if self.sensor_sigma < 0.0 {
            return Err(CoreError::InvalidConfig("sensor_sigma must be ≥ 0".into()));
        }
        if !(0.0..1.0).contains(&self.false_loop_ratio) {
            return Err(CoreError::InvalidConfig("false_loop_ratio must be in [0, 1)".into()));
        }
        if self.scan_rate_hz <= 0.0 || self.speed_mps <= 0.0 {
            return Err(CoreError::InvalidConfig("scan rate and speed must be positive".into()));
        }
        if self.rays_per_scan == 0 {
            return Err(CoreError::InvalidConfig("rays_per_scan must be ≥ 1".into()));
        }
        if self.loop_radius <= 0.0 {
            return Err(CoreError::InvalidConfig("loop_radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RobotSession {
    pub id: u32,
    /// Ground-truth poses in the shared world frame.
    pub gt: Vec<Pose>,
    /// Drifted odometry in the robot's own frame; pose 0 is the identity.
    pub odom: Vec<Pose>,
    /// One sensor-frame cloud per pose.
    pub scans: Vec<PointCloud>,
}

#[derive(Clone, Debug)]
pub struct SessionBundle {
    pub world: PlaneSet,
    pub robots: Vec<RobotSession>,
    pub candidates: Vec<LoopClosure>,
}

/// splitmix64-style stream split so each consumer gets an independent seed.
pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Resamples a waypoint polyline at fixed arc-length spacing with yaw taken
/// from the local tangent. Always includes the start point; includes the
/// final waypoint when it does not coincide with the last sample.
fn resample_polyline(waypoints: &[Vector3<f64>], spacing: f64) -> Vec<Se3> {
    let mut samples: Vec<(Vector3<f64>, f64)> = Vec::new();
    let mut yaw = 0.0;
    let mut carried = 0.0;
    for w in waypoints.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if len < 1e-12 {
            continue;
        }
        let dir = seg / len;
        if dir.x.abs() > 1e-12 || dir.y.abs() > 1e-12 {
            yaw = dir.y.atan2(dir.x);
        }
        let mut t = carried;
        while t < len {
            samples.push((w[0] + dir * t, yaw));
            t += spacing;
        }
        carried = t - len;
    }
    let end = *waypoints.last().expect("validated: ≥ 2 waypoints");
    if samples.last().map_or(true, |(p, _)| (p - end).norm() > 1e-9) {
        samples.push((end, yaw));
    }
    samples
        .into_iter()
        .map(|(p, yaw)| {
            let (s, c) = yaw.sin_cos();
            let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
            Se3::new(rot, p)
        })
        .collect()
}

/// Builds the full deterministic session: world, ground truth, drifted
/// odometry (identity-anchored per robot), sensor-frame scans, and raw loop
/// candidates with validity labels.
pub fn generate_bundle(spec: &SessionSpec) -> Result<SessionBundle> {
    spec.validate()?;
    let world = generate_world(spec.world_kind, spec.world_extent, derive_seed(spec.seed, 1))?;
    let spacing = spec.speed_mps / spec.scan_rate_hz;
    let mut robots = Vec::with_capacity(spec.robot_count);
    for k in 0..spec.robot_count {
        let xfs = resample_polyline(&spec.waypoints[k], spacing);
        if xfs.len() < 2 {
            return Err(CoreError::InvalidConfig(format!(
                "robot {k} trajectory resampled to fewer than 2 poses"
            )));
        }
        let gt: Vec<Pose> = xfs
            .iter()
            .enumerate()
            .map(|(i, xf)| Pose {
                key: PoseKey { robot: k as u32, seq: i as u32 },
                time: i as f64 / spec.scan_rate_hz,
                xf: *xf,
            })
            .collect();
        // Odometry lives in the robot's own frame: anchor at pose 0, then
        // corrupt the local chain.
        let anchor_inv = xfs[0].inverse();
        let local: Vec<Se3> = xfs.iter().map(|x| anchor_inv.compose(x)).collect();
        let drifted = inject_drift(&local, &spec.drift, derive_seed(spec.seed, 100 + k as u64))?;
        let odom: Vec<Pose> = drifted
            .iter()
            .zip(&gt)
            .map(|(xf, g)| Pose { key: g.key, time: g.time, xf: *xf })
            .collect();
        let scans: Vec<PointCloud> = xfs
            .iter()
            .enumerate()
            .map(|(i, xf)| {
                simulate_scan(
                    &world,
                    xf,
                    spec.rays_per_scan,
                    spec.sensor_sigma,
                    derive_seed(spec.seed, ((k as u64) << 32) | (1000 + i as u64)),
                )
            })
            .collect::<Result<_>>()?;
        robots.push(RobotSession { id: k as u32, gt, odom, scans });
    }
    let trajs: Vec<Vec<Se3>> = robots
        .iter()
        .map(|r| r.gt.iter().map(|p| p.xf).collect())
        .collect();
    let candidates = candidates_from_trajectories(
        &trajs,
        spec.loop_radius,
        spec.false_loop_ratio,
        derive_seed(spec.seed, 2),
    )?;
    Ok(SessionBundle { world, robots, candidates })
}

/// Writes `robot_<k>/{gt.tum, odom.tum, scan_<i>.ply}`, `loops.json`, and
/// `world.json` under `dir`.
pub fn write_session(dir: &Path, bundle: &SessionBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))?;
    for robot in &bundle.robots {
        let rdir = dir.join(format!("robot_{}", robot.id));
        std::fs::create_dir_all(&rdir).map_err(|e| CoreError::io(rdir.display().to_string(), e))?;
        io::write_tum(&rdir.join("gt.tum"), &robot.gt)?;
        io::write_tum(&rdir.join("odom.tum"), &robot.odom)?;
        for (i, scan) in robot.scans.iter().enumerate() {
            io::write_ply(&rdir.join(format!("scan_{i}.ply")), scan)?;
        }
    }
    io::write_json(&dir.join("loops.json"), &bundle.candidates)?;
    io::write_json(&dir.join("world.json"), &bundle.world)?;
    Ok(())
}

/// Reads a session directory produced by [`write_session`].
pub fn read_session(dir: &Path) -> Result<SessionBundle> {
    let world: PlaneSet = io::read_json(&dir.join("world.json"))?;
    let candidates: Vec<LoopClosure> = io::read_json(&dir.join("loops.json"))?;
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| CoreError::io(dir.display().to_string(), e))? {
        let entry = entry.map_err(|e| CoreError::io(dir.display().to_string(), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("robot_") {
            if let Ok(k) = num.parse::<u32>() {
                ids.push(k);
            }
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(CoreError::EmptyInput("session directory has no robot_<k> subdirectories"));
    }
    let mut robots = Vec::with_capacity(ids.len());
    for k in ids {
        let rdir = dir.join(format!("robot_{k}"));
        let gt = io::read_tum(&rdir.join("gt.tum"), k)?;
        let odom = io::read_tum(&rdir.join("odom.tum"), k)?;
        let mut scans = Vec::with_capacity(gt.len());
        for i in 0..gt.len() {
            scans.push(io::read_ply(&rdir.join(format!("scan_{i}.ply")), Frame::Sensor)?);
        }
        robots.push(RobotSession { id: k, gt, odom, scans });
    }
    Ok(SessionBundle { world, robots, candidates })
}
