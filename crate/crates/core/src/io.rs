//! Text formats shared across the pipeline: TUM trajectories and ASCII PLY
//! point clouds. Writers use fixed-precision formatting so identical inputs
//! produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::geom::{Frame, PointCloud, Pose, PoseKey, Se3};
use crate::{CoreError, Result};

/// One trajectory line: "timestamp tx ty tz qx qy qz qw".
pub fn write_tum(path: &Path, poses: &[Pose]) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    for p in poses {
        let q = p.xf.quaternion();
        let t = p.xf.translation;
        writeln!(
            out,
            "{:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            p.time, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        )
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    }
    out.flush().map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Reads a TUM trajectory, assigning sequence indices 0.. in file order.
pub fn read_tum(path: &Path, robot: u32) -> Result<Vec<Pose>> {
    let file = File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut poses = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_ascii_whitespace().collect();
        if fields.len() != 8 {
            return Err(CoreError::parse(
                path.display().to_string(),
                lineno + 1,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let mut vals = [0.0f64; 8];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f.parse().map_err(|_| {
                CoreError::parse(
                    path.display().to_string(),
                    lineno + 1,
                    format!("bad float {f:?}"),
                )
            })?;
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(
            vals[7], vals[4], vals[5], vals[6],
        ));
        let xf = Se3::from_quat_trans(&q, Vector3::new(vals[1], vals[2], vals[3]));
        let seq = poses.len() as u32;
        poses.push(Pose::new(PoseKey::new(robot, seq), vals[0], xf));
    }
    Ok(poses)
}

/// ASCII PLY with x,y,z float properties.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let file = File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>, s: String| -> Result<()> {
        out.write_all(s.as_bytes())
            .map_err(|e| CoreError::io(path.display().to_string(), e))
    };
    write(
        &mut out,
        format!(
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
            cloud.points.len()
        ),
    )?;
    for p in &cloud.points {
        write(&mut out, format!("{:.6} {:.6} {:.6}\n", p.x, p.y, p.z))?;
    }
    out.flush().map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Reads an ASCII PLY with x,y,z properties; the frame is supplied by the
/// caller since PLY carries no frame metadata.
pub fn read_ply(path: &Path, frame: Frame) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let path_str = path.display().to_string();
    let mut lines = reader.lines().enumerate();

    let mut vertex_count: Option<usize> = None;
    let mut header_done = false;
    let mut header_lines = 0usize;
    let mut xyz_cols: Vec<usize> = Vec::new();
    let mut prop_index = 0usize;
    for (lineno, line) in &mut lines {
        header_lines = lineno + 1;
        let line = line.map_err(|e| CoreError::io(path_str.clone(), e))?;
        let t = line.trim();
        if lineno == 0 {
            if t != "ply" {
                return Err(CoreError::parse(path_str, 1, "missing ply magic"));
            }
            continue;
        }
        if t == "end_header" {
            header_done = true;
            break;
        }
        let fields: Vec<&str> = t.split_ascii_whitespace().collect();
        match fields.first().copied() {
            Some("format") => {
                if fields.get(1) != Some(&"ascii") {
                    return Err(CoreError::parse(path_str, lineno + 1, "only ascii PLY supported"));
                }
            }
            Some("element") => {
                if fields.get(1) == Some(&"vertex") {
                    let n = fields
                        .get(2)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| {
                            CoreError::parse(path_str.clone(), lineno + 1, "bad vertex count")
                        })?;
                    vertex_count = Some(n);
                    prop_index = 0;
                } else {
                    return Err(CoreError::parse(
                        path_str,
                        lineno + 1,
                        format!("unsupported element {:?}", fields.get(1)),
                    ));
                }
            }
            Some("property") => {
                match fields.get(2).copied() {
                    Some("x") => xyz_cols.push(prop_index),
                    Some("y") => xyz_cols.push(prop_index),
                    Some("z") => xyz_cols.push(prop_index),
                    _ => {}
                }
                prop_index += 1;
            }
            Some("comment") | Some("obj_info") => {}
            _ => {
                return Err(CoreError::parse(
                    path_str,
                    lineno + 1,
                    format!("unexpected header line {t:?}"),
                ))
            }
        }
    }
    if !header_done {
        return Err(CoreError::parse(path_str, header_lines, "unterminated header"));
    }
    let count = vertex_count
        .ok_or_else(|| CoreError::parse(path_str.clone(), header_lines, "no vertex element"))?;
    if xyz_cols.len() != 3 {
        return Err(CoreError::parse(path_str, header_lines, "need x, y, z properties"));
    }

    let mut points = Vec::with_capacity(count);
    for (lineno, line) in &mut lines {
        if points.len() == count {
            break;
        }
        let line = line.map_err(|e| CoreError::io(path_str.clone(), e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let fields: Vec<&str> = t.split_ascii_whitespace().collect();
        let mut coords = [0.0f64; 3];
        for (slot, &col) in xyz_cols.iter().enumerate() {
            let f = fields.get(col).ok_or_else(|| {
                CoreError::parse(path_str.clone(), lineno + 1, "short vertex line")
            })?;
            coords[slot] = f.parse().map_err(|_| {
                CoreError::parse(path_str.clone(), lineno + 1, format!("bad float {f:?}"))
            })?;
        }
        points.push(Vector3::new(coords[0], coords[1], coords[2]));
    }
    if points.len() != count {
        return Err(CoreError::parse(
            path_str,
            header_lines,
            format!("expected {count} vertices, found {}", points.len()),
        ));
    }
    PointCloud::new(points, frame, None)
}

/// Serde adapter storing an SE(3) transform as the 7-tuple
/// [tx, ty, tz, qx, qy, qz, qw].
pub mod se3_tuple {
    use nalgebra::{Quaternion, UnitQuaternion, Vector3};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::geom::Se3;

    pub fn serialize<S: Serializer>(xf: &Se3, ser: S) -> Result<S::Ok, S::Error> {
        let q = xf.quaternion();
        let t = xf.translation;
        [t.x, t.y, t.z, q.i, q.j, q.k, q.w].serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Se3, D::Error> {
        let v = <[f64; 7]>::deserialize(de)?;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(v[6], v[3], v[4], v[5]));
        Ok(Se3::from_quat_trans(&q, Vector3::new(v[0], v[1], v[2])))
    }
}

/// Serializes any serde value to pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CoreError::Json { path: path.display().to_string(), source: e })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CoreError::io(path.display().to_string(), e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CoreError::Json { path: path.display().to_string(), source: e })
}
