//! Text interop for pose graphs: `VERTEX_SE3:QUAT`, `EDGE_SE3:QUAT` (with
//! the 21 upper-triangular information entries) and a `FIX` line for the
//! anchor. Node ids pack as `(robot << 20) | seq`. Edge kinds are inferred
//! on read (consecutive same-robot ids are odometry, everything else a
//! loop), so window constraints degrade to loop edges across a round trip.

use std::collections::BTreeMap;

use nalgebra::{Matrix6, Quaternion, UnitQuaternion, Vector3};

use crate::geom::{PoseKey, Se3};
use crate::{CoreError, Result};

use super::{EdgeKind, GraphEdge, PoseGraph};

const SEQ_BITS: u32 = 20;
const ORIGIN: &str = "<g2o text>";

fn pack(key: PoseKey) -> u64 {
    ((key.robot as u64) << SEQ_BITS) | key.seq as u64
}

fn unpack(id: u64) -> PoseKey {
    PoseKey::new((id >> SEQ_BITS) as u32, (id & ((1 << SEQ_BITS) - 1)) as u32)
}

fn fmt_pose(xf: &Se3) -> String {
    let t = xf.translation;
    let q = xf.quaternion();
    format!(
        "{} {} {} {} {} {} {}",
        t.x, t.y, t.z, q.coords.x, q.coords.y, q.coords.z, q.coords.w
    )
}

pub fn write_g2o(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for (key, xf) in &graph.nodes {
        out.push_str(&format!("VERTEX_SE3:QUAT {} {}\n", pack(*key), fmt_pose(xf)));
    }
    out.push_str(&format!("FIX {}\n", pack(graph.anchor)));
    for e in &graph.edges {
        out.push_str(&format!(
            "EDGE_SE3:QUAT {} {} {}",
            pack(e.a),
            pack(e.b),
            fmt_pose(&e.measurement)
        ));
        for r in 0..6 {
            for c in r..6 {
                out.push_str(&format!(" {}", e.information[(r, c)]));
            }
        }
        out.push('\n');
    }
    out
}

fn parse_f64(tok: &str, line_no: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| CoreError::parse(ORIGIN, line_no, format!("bad float {tok:?}")))
}

fn parse_id(tok: &str, line_no: usize) -> Result<PoseKey> {
    let id = tok
        .parse::<u64>()
        .map_err(|_| CoreError::parse(ORIGIN, line_no, format!("bad node id {tok:?}")))?;
    Ok(unpack(id))
}

/// Seven pose floats: tx ty tz qx qy qz qw. The quaternion is
/// renormalized, forgiving truncated text.
fn parse_pose(toks: &[&str], line_no: usize) -> Result<Se3> {
    let v: Vec<f64> = toks
        .iter()
        .map(|t| parse_f64(t, line_no))
        .collect::<Result<_>>()?;
    let q = Quaternion::new(v[6], v[3], v[4], v[5]);
    if q.norm() < 1e-6 {
        return Err(CoreError::parse(ORIGIN, line_no, "zero quaternion"));
    }
    Ok(Se3::from_quat_trans(
        &UnitQuaternion::from_quaternion(q),
        Vector3::new(v[0], v[1], v[2]),
    ))
}

pub fn read_g2o(text: &str) -> Result<PoseGraph> {
    let mut nodes: BTreeMap<PoseKey, Se3> = BTreeMap::new();
    let mut edges = Vec::new();
    let mut anchor = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None => continue,
            Some("VERTEX_SE3:QUAT") => {
                if toks.len() != 9 {
                    return Err(CoreError::parse(ORIGIN, line_no, "vertex needs id + 7 floats"));
                }
                let key = parse_id(toks[1], line_no)?;
                nodes.insert(key, parse_pose(&toks[2..9], line_no)?);
            }
            Some("EDGE_SE3:QUAT") => {
                if toks.len() != 10 + 21 {
                    return Err(CoreError::parse(
                        ORIGIN,
                        line_no,
                        "edge needs 2 ids + 7 pose floats + 21 information entries",
                    ));
                }
                let a = parse_id(toks[1], line_no)?;
                let b = parse_id(toks[2], line_no)?;
                let measurement = parse_pose(&toks[3..10], line_no)?;
                let mut info = Matrix6::zeros();
                let mut it = toks[10..].iter();
                for r in 0..6 {
                    for c in r..6 {
                        let v = parse_f64(it.next().unwrap(), line_no)?;
                        info[(r, c)] = v;
                        info[(c, r)] = v;
                    }
                }
                let kind = if a.robot == b.robot && a.seq.abs_diff(b.seq) == 1 {
                    EdgeKind::Odometry
                } else {
                    EdgeKind::Loop
                };
                edges.push(GraphEdge::new(kind, a, b, measurement, info)?);
            }
            Some("FIX") => {
                if toks.len() != 2 {
                    return Err(CoreError::parse(ORIGIN, line_no, "FIX needs one id"));
                }
                anchor = Some(parse_id(toks[1], line_no)?);
            }
            Some(tag) => {
                return Err(CoreError::parse(ORIGIN, line_no, format!("unknown tag {tag:?}")));
            }
        }
    }
    let anchor = match anchor.or_else(|| nodes.keys().next().copied()) {
        Some(a) => a,
        None => return Err(CoreError::EmptyInput("g2o text")),
    };
    let graph = PoseGraph { nodes, edges, anchor };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Twist;

    fn sample_graph() -> PoseGraph {
        let mut nodes = BTreeMap::new();
        let poses: Vec<Se3> = (0..4)
            .map(|i| Se3::exp(&Twist::new(0.1 * i as f64, -0.05, 0.2, i as f64, 0.3, -0.7)))
            .collect();
        for (i, p) in poses.iter().enumerate() {
            nodes.insert(PoseKey::new(0, i as u32), *p);
        }
        nodes.insert(PoseKey::new(1, 0), Se3::exp(&Twist::new(0.0, 0.4, 0.0, 5.0, 5.0, 0.0)));
        let mut edges = vec![
            GraphEdge::weighted(
                EdgeKind::Odometry,
                PoseKey::new(0, 0),
                PoseKey::new(0, 1),
                poses[0].delta_to(&poses[1]),
                2.0,
            )
            .unwrap(),
            GraphEdge::weighted(
                EdgeKind::Loop,
                PoseKey::new(0, 3),
                PoseKey::new(1, 0),
                Se3::identity(),
                5.0,
            )
            .unwrap(),
        ];
        // An anisotropic information matrix exercises all 21 entries.
        let mut info = Matrix6::identity();
        info[(0, 0)] = 4.0;
        info[(0, 3)] = 0.5;
        info[(3, 0)] = 0.5;
        edges.push(
            GraphEdge::new(
                EdgeKind::Odometry,
                PoseKey::new(0, 1),
                PoseKey::new(0, 2),
                poses[1].delta_to(&poses[2]),
                info,
            )
            .unwrap(),
        );
        PoseGraph { nodes, edges, anchor: PoseKey::new(0, 0) }
    }

    #[test]
    fn round_trip_preserves_graph() {
        let g = sample_graph();
        let text = write_g2o(&g);
        let back = read_g2o(&text).unwrap();
        assert_eq!(back.anchor, g.anchor);
        assert_eq!(back.nodes.len(), g.nodes.len());
        assert_eq!(back.edges.len(), g.edges.len());
        for (k, p) in &g.nodes {
            let q = back.nodes[k];
            assert!((q.translation - p.translation).norm() < 1e-12);
            assert!(p.delta_to(&q).rotation_angle() < 1e-9);
        }
        for (e, f) in g.edges.iter().zip(&back.edges) {
            assert_eq!((e.a, e.b), (f.a, f.b));
            assert!((e.information - f.information).amax() < 1e-12);
            assert!(
                (e.measurement.translation - f.measurement.translation).norm() < 1e-12
            );
        }
    }

    #[test]
    fn kinds_inferred_from_ids() {
        let g = sample_graph();
        let back = read_g2o(&write_g2o(&g)).unwrap();
        assert_eq!(back.edges[0].kind, EdgeKind::Odometry);
        assert_eq!(back.edges[1].kind, EdgeKind::Loop, "cross-robot edge");
        assert_eq!(back.edges[2].kind, EdgeKind::Odometry);
    }

    #[test]
    fn golden_lines_parse() {
        let text = "\
VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1
VERTEX_SE3:QUAT 1 1 0 0 0 0 0.7071067811865476 0.7071067811865476
FIX 0
EDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1
";
        let g = read_g2o(text).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.anchor, PoseKey::new(0, 0));
        let v1 = g.nodes[&PoseKey::new(0, 1)];
        // The second vertex carries a 90° yaw.
        assert!((v1.rotation[(0, 1)] + 1.0).abs() < 1e-9);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].information, Matrix6::identity());
    }

    #[test]
    fn unnormalized_quaternion_is_repaired() {
        let text = "\
VERTEX_SE3:QUAT 0 0 0 0 0 0 0 2
VERTEX_SE3:QUAT 1 1 0 0 0 0 0 2
EDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1
";
        let g = read_g2o(text).unwrap();
        let r = g.nodes[&PoseKey::new(0, 0)].rotation;
        assert!((r - nalgebra::Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(read_g2o("VERTEX_SE3:QUAT 0 0 0 0").is_err());
        assert!(read_g2o("WOBBLE 1 2 3").is_err());
        assert!(read_g2o("").is_err());
        // Edge referencing an unknown vertex fails validation.
        let text = "\
VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1
EDGE_SE3:QUAT 0 9 1 0 0 0 0 0 1 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1
";
        assert!(read_g2o(text).is_err());
    }

    #[test]
    fn ids_pack_robot_and_seq() {
        let k = PoseKey::new(3, 77);
        assert_eq!(unpack(pack(k)), k);
        let g = PoseGraph {
            nodes: BTreeMap::from([(k, Se3::identity())]),
            edges: vec![],
            anchor: k,
        };
        let text = write_g2o(&g);
        assert!(text.contains(&format!("VERTEX_SE3:QUAT {} ", (3u64 << 20) | 77)));
        let back = read_g2o(&text).unwrap();
        assert!(back.nodes.contains_key(&k));
    }
}
