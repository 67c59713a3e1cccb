use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// A bounded planar patch: unit normal, offset (nᵀx = d), and a convex
/// polygon of world-space vertices lying on the plane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub polygon: Vec<Vector3<f64>>,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, offset: f64, polygon: Vec<Vector3<f64>>) -> Result<Self> {
        let n = normal.norm();
        if n < 1e-12 {
            return Err(CoreError::InvalidConfig("plane normal is zero".into()));
        }
        let normal = normal / n;
        let offset = offset / n;
        if polygon.len() < 3 {
            return Err(CoreError::InvalidConfig("plane polygon needs ≥ 3 vertices".into()));
        }
        for v in &polygon {
            if (normal.dot(v) - offset).abs() > 1e-9 {
                return Err(CoreError::InvalidConfig(format!(
                    "polygon vertex off plane by {:e}",
                    (normal.dot(v) - offset).abs()
                )));
            }
        }
        Ok(Plane { normal, offset, polygon })
    }

    /// Fan triangulation (v0, vi, vi+1); valid for the convex polygons the
    /// generators produce.
    pub fn triangles(&self) -> impl Iterator<Item = [Vector3<f64>; 3]> + '_ {
        (1..self.polygon.len().saturating_sub(1)).map(move |i| {
            [self.polygon[0], self.polygon[i], self.polygon[i + 1]]
        })
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (self.normal.dot(p) - self.offset).abs()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PlaneSet {
    pub planes: Vec<Plane>,
}

/// Distance from `p` to the closest point of triangle (a, b, c).
/// Closest-point-on-triangle case analysis (vertex, edge, face regions).
fn point_triangle_distance(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

impl PlaneSet {
    /// Distance from `p` to the nearest bounded surface patch.
    pub fn nearest_surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.planes
            .iter()
            .flat_map(|pl| pl.triangles())
            .map(|t| point_triangle_distance(p, &t[0], &t[1], &t[2]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldKind {
    Corridor,
    Courtyard,
    Garage,
}

impl std::str::FromStr for WorldKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(WorldKind::Corridor),
            "courtyard" => Ok(WorldKind::Courtyard),
            "garage" => Ok(WorldKind::Garage),
            other => Err(CoreError::InvalidConfig(format!("unknown world kind {other:?}"))),
        }
    }
}

/// Axis-aligned rectangle helper: center c, in-plane axes e1/e2 with half
/// extents h1/h2, outward normal.
fn rect(
    normal: Vector3<f64>,
    point_on_plane: Vector3<f64>,
    e1: Vector3<f64>,
    h1: f64,
    e2: Vector3<f64>,
    h2: f64,
) -> Plane {
    let c = point_on_plane;
    let polygon = vec![
        c - e1 * h1 - e2 * h2,
        c + e1 * h1 - e2 * h2,
        c + e1 * h1 + e2 * h2,
        c - e1 * h1 + e2 * h2,
    ];
    Plane::new(normal, normal.dot(&c), polygon).expect("rect construction is on-plane")
}

/// Four side walls of an axis-aligned box footprint (for pillars and
/// buildings), plus optionally the top face.
fn box_walls(center_xy: (f64, f64), half_x: f64, half_y: f64, z0: f64, z1: f64, top: bool) -> Vec<Plane> {
    let (cx, cy) = center_xy;
    let cz = (z0 + z1) * 0.5;
    let hz = (z1 - z0) * 0.5;
    let mut planes = vec![
        rect(Vector3::x(), Vector3::new(cx + half_x, cy, cz), Vector3::y(), half_y, Vector3::z(), hz),
        rect(-Vector3::x(), Vector3::new(cx - half_x, cy, cz), Vector3::y(), half_y, Vector3::z(), hz),
        rect(Vector3::y(), Vector3::new(cx, cy + half_y, cz), Vector3::x(), half_x, Vector3::z(), hz),
        rect(-Vector3::y(), Vector3::new(cx, cy - half_y, cz), Vector3::x(), half_x, Vector3::z(), hz),
    ];
    if top {
        planes.push(rect(
            Vector3::z(),
            Vector3::new(cx, cy, z1),
            Vector3::x(),
            half_x,
            Vector3::y(),
            half_y,
        ));
    }
    planes
}

/// Deterministic synthetic worlds. Every kind yields at least 6 bounded
/// planes; clutter positions vary with the seed.
pub fn generate_world(kind: WorldKind, extent: f64, seed: u64) -> Result<PlaneSet> {
    if extent <= 0.0 {
        return Err(CoreError::InvalidConfig("world extent must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x5851_f42d).wrapping_add(11));
    let planes = match kind {
        WorldKind::Corridor => {
            let l = extent;
            let half_w = 3.0;
            let h = 3.0;
            let mut planes = vec![
                // floor, ceiling, two side walls, two end caps
                rect(Vector3::z(), Vector3::new(l / 2.0, 0.0, 0.0), Vector3::x(), l / 2.0, Vector3::y(), half_w),
                rect(-Vector3::z(), Vector3::new(l / 2.0, 0.0, h), Vector3::x(), l / 2.0, Vector3::y(), half_w),
                rect(Vector3::y(), Vector3::new(l / 2.0, -half_w, h / 2.0), Vector3::x(), l / 2.0, Vector3::z(), h / 2.0),
                rect(-Vector3::y(), Vector3::new(l / 2.0, half_w, h / 2.0), Vector3::x(), l / 2.0, Vector3::z(), h / 2.0),
                rect(Vector3::x(), Vector3::new(0.0, 0.0, h / 2.0), Vector3::y(), half_w, Vector3::z(), h / 2.0),
                rect(-Vector3::x(), Vector3::new(l, 0.0, h / 2.0), Vector3::y(), half_w, Vector3::z(), h / 2.0),
            ];
            // Wall cabinets and floor crates at seeded positions give every
            // stretch of corridor a distinct signature; a bare corridor is
            // self-similar under x-translation and a half-turn, which makes
            // far-apart scans geometrically indistinguishable.
            let n_boxes = (l / 2.5).ceil() as usize;
            let slot = l / n_boxes as f64;
            for i in 0..n_boxes {
                let x = (i as f64 + rng.gen_range(0.2..0.8)) * slot;
                let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
                let depth = rng.gen_range(0.2..0.5);
                let half_x = rng.gen_range(0.3..0.7);
                let height = rng.gen_range(0.6..2.2);
                planes.extend(box_walls(
                    (x, side * (half_w - depth)),
                    half_x,
                    depth,
                    0.0,
                    height,
                    true,
                ));
            }
            // Crates stay out of the centre strip where robots drive.
            let n_crates = (l / 7.0).ceil() as usize;
            for _ in 0..n_crates {
                let x = rng.gen_range(0.1 * l..0.9 * l);
                let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
                let y = side * rng.gen_range(1.3..1.9);
                let s = rng.gen_range(0.25..0.5);
                let height = rng.gen_range(0.4..1.1);
                planes.extend(box_walls((x, y), s, s, 0.0, height, true));
            }
            planes
        }
        WorldKind::Courtyard => {
            let half = extent / 2.0;
            let wall_h = 4.0;
            let mut planes = vec![rect(
                Vector3::z(),
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::x(),
                half,
                Vector3::y(),
                half,
            )];
            // Outer walls face inward.
            planes.push(rect(-Vector3::x(), Vector3::new(half, 0.0, wall_h / 2.0), Vector3::y(), half, Vector3::z(), wall_h / 2.0));
            planes.push(rect(Vector3::x(), Vector3::new(-half, 0.0, wall_h / 2.0), Vector3::y(), half, Vector3::z(), wall_h / 2.0));
            planes.push(rect(-Vector3::y(), Vector3::new(0.0, half, wall_h / 2.0), Vector3::x(), half, Vector3::z(), wall_h / 2.0));
            planes.push(rect(Vector3::y(), Vector3::new(0.0, -half, wall_h / 2.0), Vector3::x(), half, Vector3::z(), wall_h / 2.0));
            // Central building with a roof; the unequal footprint keeps yard
            // views distinct under quarter-turn rotations.
            let bx = half / 3.0;
            let by = half / 4.5;
            planes.extend(box_walls((0.0, 0.0), bx, by, 0.0, wall_h, true));
            // Seeded kiosks of varying size in the yard.
            for _ in 0..4 {
                let cx = rng.gen_range(-half * 0.7..half * 0.7);
                let cy = rng.gen_range(-half * 0.7..half * 0.7);
                if cx.abs() < bx + 1.5 && cy.abs() < by + 1.5 {
                    continue;
                }
                let kx = rng.gen_range(0.5..1.4);
                let ky = rng.gen_range(0.5..1.4);
                // Below typical sensor height so a kiosk under the path
                // never swallows the sensor.
                let kh = rng.gen_range(0.7..1.2);
                planes.extend(box_walls((cx, cy), kx, ky, 0.0, kh, true));
            }
            planes
        }
        WorldKind::Garage => {
            let half = extent / 2.0;
            let h = 2.6;
            let mut planes = vec![
                rect(Vector3::z(), Vector3::new(0.0, 0.0, 0.0), Vector3::x(), half, Vector3::y(), half),
                rect(-Vector3::z(), Vector3::new(0.0, 0.0, h), Vector3::x(), half, Vector3::y(), half),
                rect(-Vector3::x(), Vector3::new(half, 0.0, h / 2.0), Vector3::y(), half, Vector3::z(), h / 2.0),
                rect(Vector3::x(), Vector3::new(-half, 0.0, h / 2.0), Vector3::y(), half, Vector3::z(), h / 2.0),
                rect(-Vector3::y(), Vector3::new(0.0, half, h / 2.0), Vector3::x(), half, Vector3::z(), h / 2.0),
                rect(Vector3::y(), Vector3::new(0.0, -half, h / 2.0), Vector3::x(), half, Vector3::z(), h / 2.0),
            ];
            // Pillar grid with small seeded jitter.
            let spacing = (extent / 4.0).max(4.0);
            let steps = (extent / spacing) as i64;
            for ix in -steps / 2..=steps / 2 {
                for iy in -steps / 2..=steps / 2 {
                    let cx = ix as f64 * spacing + rng.gen_range(-0.3..0.3);
                    let cy = iy as f64 * spacing + rng.gen_range(-0.3..0.3);
                    if cx.abs() > half - 1.0 || cy.abs() > half - 1.0 {
                        continue;
                    }
                    planes.extend(box_walls((cx, cy), 0.3, 0.3, 0.0, h, false));
                }
            }
            // Seeded parked boxes give each bay its own signature.
            let n_cars = (extent / 5.0) as usize;
            for _ in 0..n_cars {
                let cx = rng.gen_range(-(half - 2.0)..half - 2.0);
                let cy = rng.gen_range(-(half - 2.0)..half - 2.0);
                let lx = rng.gen_range(0.9..1.2);
                let ly = rng.gen_range(0.4..0.55);
                let ch = rng.gen_range(0.6..0.9);
                planes.extend(box_walls((cx, cy), lx, ly, 0.0, ch, true));
            }
            planes
        }
    };
    Ok(PlaneSet { planes })
}
