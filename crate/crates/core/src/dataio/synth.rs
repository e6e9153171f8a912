//! Mesh surface sampling and labeled synthetic shape generators.
//!
//! The four shape kinds give a small but geometrically varied corpus:
//! telling a cube from a sphere takes local curvature context, and the
//! segmentation kinds (cylinder, twin spheres) carry per-point part
//! labels. All sampling is bitwise deterministic given the seed.

use super::{DataError, PointCloud};
use crate::rng::SplitMix64;
use std::str::FromStr;

/// Cylinder height; caps sit at z = ±CYLINDER_HEIGHT / 2.
pub const CYLINDER_HEIGHT: f64 = 1.6;
const CYLINDER_RADIUS: f64 = 0.5;

/// Surface-to-surface gap between the twin spheres.
pub const TWIN_SPHERES_GAP: f64 = 0.5;
const TWIN_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    TwinSpheres,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::TwinSpheres,
    ];

    /// Kinds that carry per-point part labels.
    pub const SEGMENTATION: [ShapeKind; 2] = [ShapeKind::Cylinder, ShapeKind::TwinSpheres];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::TwinSpheres => "twin_spheres",
        }
    }

    /// Part label ids used by this kind, empty for unlabeled kinds.
    pub fn part_ids(self) -> &'static [u32] {
        match self {
            ShapeKind::Cylinder => &[0, 1, 2], // side, top cap, bottom cap
            ShapeKind::TwinSpheres => &[0, 1],
            _ => &[],
        }
    }
}

impl FromStr for ShapeKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "cylinder" => Ok(ShapeKind::Cylinder),
            "twin_spheres" => Ok(ShapeKind::TwinSpheres),
            other => Err(DataError::UnknownKind(other.to_string())),
        }
    }
}

fn unit_dir(rng: &mut SplitMix64) -> [f64; 3] {
    loop {
        let v = [rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// Draw `n` points on the named unit-scale surface, plus isotropic
/// Gaussian noise of the given sigma. Segmentation kinds attach labels.
pub fn gen_synthetic(
    kind: ShapeKind,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<PointCloud, DataError> {
    if n < 8 {
        return Err(DataError::TooFewPoints(n));
    }
    if noise_sigma < 0.0 || !noise_sigma.is_finite() {
        return Err(DataError::BadNoise(noise_sigma));
    }
    let mut rng = SplitMix64::new(seed);
    let mut coords = Vec::with_capacity(n);
    let mut labels = Vec::new();

    match kind {
        ShapeKind::Sphere => {
            for _ in 0..n {
                coords.push(unit_dir(&mut rng));
            }
        }
        ShapeKind::Cube => {
            // Six faces of the [-1, 1]^3 cube, equal areas.
            for _ in 0..n {
                let face = rng.below(6);
                let u = rng.uniform(-1.0, 1.0);
                let v = rng.uniform(-1.0, 1.0);
                let p = match face {
                    0 => [1.0, u, v],
                    1 => [-1.0, u, v],
                    2 => [u, 1.0, v],
                    3 => [u, -1.0, v],
                    4 => [u, v, 1.0],
                    _ => [u, v, -1.0],
                };
                coords.push(p);
            }
        }
        ShapeKind::Cylinder => {
            let half = CYLINDER_HEIGHT / 2.0;
            let side_area = std::f64::consts::TAU * CYLINDER_RADIUS * CYLINDER_HEIGHT;
            let cap_area = std::f64::consts::PI * CYLINDER_RADIUS * CYLINDER_RADIUS;
            let total = side_area + 2.0 * cap_area;
            for _ in 0..n {
                let pick = rng.next_f64() * total;
                let theta = rng.uniform(0.0, std::f64::consts::TAU);
                if pick < side_area {
                    let z = rng.uniform(-half, half);
                    coords.push([
                        CYLINDER_RADIUS * theta.cos(),
                        CYLINDER_RADIUS * theta.sin(),
                        z,
                    ]);
                    labels.push(0);
                } else {
                    let r = CYLINDER_RADIUS * rng.next_f64().sqrt();
                    let top = pick < side_area + cap_area;
                    coords.push([r * theta.cos(), r * theta.sin(), if top { half } else { -half }]);
                    labels.push(if top { 1 } else { 2 });
                }
            }
        }
        ShapeKind::TwinSpheres => {
            let center_x = TWIN_RADIUS + TWIN_SPHERES_GAP / 2.0;
            for _ in 0..n {
                let second = rng.below(2) == 1;
                let dir = unit_dir(&mut rng);
                let cx = if second { center_x } else { -center_x };
                coords.push([
                    cx + TWIN_RADIUS * dir[0],
                    TWIN_RADIUS * dir[1],
                    TWIN_RADIUS * dir[2],
                ]);
                labels.push(if second { 1 } else { 0 });
            }
        }
    }

    if noise_sigma > 0.0 {
        for p in &mut coords {
            for c in p.iter_mut() {
                *c += noise_sigma * rng.next_gaussian();
            }
        }
    }

    let labels = if labels.is_empty() { None } else { Some(labels) };
    PointCloud::new(coords, labels, None)
}

/// Sample `n` points uniformly over a triangle mesh surface:
/// area-weighted triangle selection, then uniform barycentric placement.
pub fn sample_mesh(
    vertices: &[[f64; 3]],
    faces: &[[usize; 3]],
    n: usize,
    seed: u64,
) -> Result<PointCloud, DataError> {
    if n == 0 {
        return Err(DataError::EmptyCloud);
    }
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut total = 0.0f64;
    for (fi, face) in faces.iter().enumerate() {
        for &v in face {
            if v >= vertices.len() {
                return Err(DataError::BadFaceIndex {
                    face: fi,
                    vertex: v,
                    vertices: vertices.len(),
                });
            }
        }
        let (a, b, c) = (vertices[face[0]], vertices[face[1]], vertices[face[2]]);
        let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cross = [
            ab[1] * ac[2] - ab[2] * ac[1],
            ab[2] * ac[0] - ab[0] * ac[2],
            ab[0] * ac[1] - ab[1] * ac[0],
        ];
        let area = 0.5 * (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        total += area;
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(DataError::ZeroAreaMesh);
    }

    let mut rng = SplitMix64::new(seed);
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        let pick = rng.next_f64() * total;
        let fi = cumulative.partition_point(|&c| c <= pick).min(faces.len() - 1);
        let face = faces[fi];
        let (a, b, c) = (vertices[face[0]], vertices[face[1]], vertices[face[2]]);
        // Square-root trick: uniform over the triangle.
        let r1 = rng.next_f64().sqrt();
        let r2 = rng.next_f64();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        coords.push([
            wa * a[0] + wb * b[0] + wc * c[0],
            wa * a[1] + wb * b[1] + wc * c[1],
            wa * a[2] + wb * b[2] + wc * c[2],
        ]);
    }
    PointCloud::new(coords, None, None)
}
