use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::geom::{Se3, Twist};
use crate::{CoreError, Result};

/// Odometry corruption rates, all per metre travelled.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DriftModel {
    /// Std dev of the random rotation angle (radians per metre).
    pub rot_rate: f64,
    /// Std dev of the random translation offset (metres per metre).
    pub trans_rate: f64,
    /// Deterministic vertical bias added to every segment (metres per metre).
    pub z_bias: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        DriftModel { rot_rate: 0.002, trans_rate: 0.01, z_bias: 0.01 }
    }
}

/// Corrupts a ground-truth trajectory into drifting odometry. Pose 0 is
/// returned unchanged; each subsequent relative motion is perturbed in
/// proportion to the segment length, so errors compound along the path.
pub fn inject_drift(gt: &[Se3], model: &DriftModel, seed: u64) -> Result<Vec<Se3>> {
    if gt.is_empty() {
        return Err(CoreError::EmptyInput("trajectory"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(gt.len());
    out.push(gt[0]);
    for i in 1..gt.len() {
        let rel = gt[i - 1].delta_to(&gt[i]);
        let len = rel.translation.norm();
        let mut xi = Twist::zeros();
        if len > 0.0 {
            if model.rot_rate > 0.0 {
                let ang = Normal::new(0.0, model.rot_rate * len).expect("finite rate").sample(&mut rng);
                let axis: [f64; 3] = UnitSphere.sample(&mut rng);
                for k in 0..3 {
                    xi[k] = axis[k] * ang;
                }
            }
            if model.trans_rate > 0.0 {
                let n = Normal::new(0.0, model.trans_rate * len).expect("finite rate");
                for k in 0..3 {
                    xi[3 + k] = n.sample(&mut rng);
                }
            }
            xi[5] += model.z_bias * len;
        }
        let noisy_rel = rel.compose(&Se3::exp(&xi));
        let prev = *out.last().expect("out is non-empty");
        out.push(prev.compose(&noisy_rel));
    }
    Ok(out)
}
