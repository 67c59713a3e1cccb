use serde::{Deserialize, Serialize};

use super::Se3;

/// Identifies one pose across the whole session set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoseKey {
    pub robot: u32,
    pub seq: u32,
}

impl PoseKey {
    pub fn new(robot: u32, seq: u32) -> Self {
        PoseKey { robot, seq }
    }
}

impl std::fmt::Display for PoseKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}p{}", self.robot, self.seq)
    }
}

/// A stamped SE(3) element, the atom of all optimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub key: PoseKey,
    pub time: f64,
    pub xf: Se3,
}

impl Pose {
    pub fn new(key: PoseKey, time: f64, xf: Se3) -> Self {
        Pose { key, time, xf }
    }
}
