use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::geom::{PoseKey, Se3, Twist};
use crate::loops::LoopClosure;
use crate::sim::bundle::SessionBundle;
use crate::{CoreError, Result};

/// Maximum simulated detector rotation error (radians) and translation
/// error (metres) on true candidates.
const ROT_NOISE_MAX: f64 = 2.0_f64.to_radians();
const TRANS_NOISE_MAX: f64 = 0.2;
/// Minimum index separation between same-robot poses for a revisit.
const MIN_SEQ_GAP: u32 = 20;
/// Nearby qualifying pairs model one detection per revisit region; pairs
/// closer than this stride (in both indices) to an accepted one are dropped.
const SUPPRESSION_GAP: u32 = 8;
/// False candidates must join poses at least this far apart.
const FALSE_MIN_DIST: f64 = 10.0;

fn bounded_twist(rng: &mut ChaCha8Rng, rot_max: f64, trans_max: f64) -> Twist {
    let mut xi = Twist::zeros();
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let ang = rng.gen_range(0.0..rot_max);
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let dist = rng.gen_range(0.0..trans_max);
    for k in 0..3 {
        xi[k] = axis[k] * ang;
        xi[3 + k] = dir[k] * dist;
    }
    xi
}

/// Builds detector-like loop candidates for a simulated session.
///
/// True candidates join poses whose ground-truth positions are within
/// `radius`; same-robot pairs additionally need an index gap above 20 so
/// consecutive poses do not count as revisits. Their relative transforms
/// are the ground-truth ones corrupted by at most 2 degrees and 0.2 m.
/// False candidates (fraction `false_ratio` of the emitted set) join poses
/// at least 10 m apart with an unrelated transform. Errors with `NoOverlap`
/// when the trajectories admit no true candidate.
pub fn generate_loop_candidates(
    bundle: &SessionBundle,
    radius: f64,
    false_ratio: f64,
    seed: u64,
) -> Result<Vec<LoopClosure>> {
    let trajs: Vec<Vec<Se3>> = bundle
        .robots
        .iter()
        .map(|r| r.gt.iter().map(|p| p.xf).collect())
        .collect();
    candidates_from_trajectories(&trajs, radius, false_ratio, seed)
}

/// Trajectory-level worker behind [`generate_loop_candidates`]; also used
/// directly by tests that have no full bundle.
pub fn candidates_from_trajectories(
    trajectories: &[Vec<Se3>],
    radius: f64,
    false_ratio: f64,
    seed: u64,
) -> Result<Vec<LoopClosure>> {
    if trajectories.iter().all(|t| t.is_empty()) {
        return Err(CoreError::EmptyInput("trajectories"));
    }
    if !(0.0..1.0).contains(&false_ratio) {
        return Err(CoreError::InvalidConfig(format!(
            "false_ratio must be in [0, 1), got {false_ratio}"
        )));
    }
    if radius <= 0.0 {
        return Err(CoreError::InvalidConfig("loop radius must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cands: Vec<LoopClosure> = Vec::new();
    // Last accepted (idx_a, idx_b) per robot pair, for revisit suppression.
    let mut last_kept: std::collections::BTreeMap<(u32, u32), Vec<(u32, u32)>> =
        std::collections::BTreeMap::new();
    for ra in 0..trajectories.len() {
        for rb in ra..trajectories.len() {
            for ia in 0..trajectories[ra].len() {
                let jb0 = if ra == rb { ia + 1 } else { 0 };
                for ib in jb0..trajectories[rb].len() {
                    if ra == rb && (ib - ia) as u32 <= MIN_SEQ_GAP {
                        continue;
                    }
                    let ga = &trajectories[ra][ia];
                    let gb = &trajectories[rb][ib];
                    if (ga.translation - gb.translation).norm() > radius {
                        continue;
                    }
                    let kept = last_kept.entry((ra as u32, rb as u32)).or_default();
                    let suppressed = kept.iter().any(|&(pa, pb)| {
                        (ia as u32).abs_diff(pa) < SUPPRESSION_GAP
                            && (ib as u32).abs_diff(pb) < SUPPRESSION_GAP
                    });
                    if suppressed {
                        continue;
                    }
                    kept.push((ia as u32, ib as u32));
                    let noise = bounded_twist(&mut rng, ROT_NOISE_MAX, TRANS_NOISE_MAX);
                    let measured = ga.delta_to(gb).compose(&Se3::exp(&noise));
                    cands.push(LoopClosure::raw(
                        PoseKey::new(ra as u32, ia as u32),
                        PoseKey::new(rb as u32, ib as u32),
                        measured,
                        Some(true),
                    )?);
                }
            }
        }
    }
    if cands.is_empty() {
        return Err(CoreError::NoOverlap);
    }
    let n_true = cands.len();
    let n_false = (false_ratio / (1.0 - false_ratio) * n_true as f64).round() as usize;
    let mut attempts = 0usize;
    let mut made = 0usize;
    while made < n_false && attempts < n_false * 1000 + 1000 {
        attempts += 1;
        let ra = rng.gen_range(0..trajectories.len());
        let rb = rng.gen_range(0..trajectories.len());
        if trajectories[ra].is_empty() || trajectories[rb].is_empty() {
            continue;
        }
        let ia = rng.gen_range(0..trajectories[ra].len());
        let ib = rng.gen_range(0..trajectories[rb].len());
        if ra == rb && ia.abs_diff(ib) as u32 <= MIN_SEQ_GAP {
            continue;
        }
        let d = (trajectories[ra][ia].translation - trajectories[rb][ib].translation).norm();
        if d < FALSE_MIN_DIST.max(radius + 5.0) {
            continue;
        }
        // An unrelated rigid transform: bounded magnitude so downstream
        // registration gets a plausible-looking but wrong prior.
        let mut xi = bounded_twist(&mut rng, std::f64::consts::PI * 0.9, 5.0);
        xi[3] += rng.gen_range(-2.0..2.0);
        let fake = Se3::exp(&xi);
        let (a, b) = if (ra, ia) <= (rb, ib) { ((ra, ia), (rb, ib)) } else { ((rb, ib), (ra, ia)) };
        cands.push(LoopClosure::raw(
            PoseKey::new(a.0 as u32, a.1 as u32),
            PoseKey::new(b.0 as u32, b.1 as u32),
            fake,
            Some(false),
        )?);
        made += 1;
    }
    Ok(cands)
}
