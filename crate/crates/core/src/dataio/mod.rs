//! Point-cloud ingestion: XYZ text files, minimal ASCII OFF meshes,
//! labeled synthetic shapes, cloud normalization, and dataset manifests.
//!
//! Every operation is pure given its inputs and seed, so loaders and
//! generators can run concurrently from multiple workers.

mod manifest;
mod off;
mod synth;
mod xyz;

pub use manifest::{load_manifest, DatasetManifest, ManifestEntry, Split};
pub use off::{load_off, Mesh};
pub use synth::{gen_synthetic, sample_mesh, ShapeKind, CYLINDER_HEIGHT, TWIN_SPHERES_GAP};
pub use xyz::{load_xyz, save_xyz};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("point cloud must contain at least one point")]
    EmptyCloud,
    #[error("coordinates must be finite")]
    NonFiniteCoords,
    #[error("labels length {labels} does not match point count {points}")]
    LabelLengthMismatch { labels: usize, points: usize },
    #[error("all points coincide; cloud has zero scale")]
    ZeroScale,
    #[error("mesh has zero total surface area")]
    ZeroAreaMesh,
    #[error("face {face} references vertex {vertex}, mesh has {vertices}")]
    BadFaceIndex {
        face: usize,
        vertex: usize,
        vertices: usize,
    },
    #[error("unknown synthetic shape kind {0:?}")]
    UnknownKind(String),
    #[error("synthetic shapes need at least 8 points, got {0}")]
    TooFewPoints(usize),
    #[error("noise sigma must be nonnegative and finite, got {0}")]
    BadNoise(f64),
}

/// A point cloud: N x 3 coordinates with optional per-point part labels
/// and an optional shape category.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<[f64; 3]>,
    pub labels: Option<Vec<u32>>,
    pub class_id: Option<u32>,
}

impl PointCloud {
    pub fn new(
        coords: Vec<[f64; 3]>,
        labels: Option<Vec<u32>>,
        class_id: Option<u32>,
    ) -> Result<Self, DataError> {
        if coords.is_empty() {
            return Err(DataError::EmptyCloud);
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteCoords);
        }
        if let Some(ref l) = labels {
            if l.len() != coords.len() {
                return Err(DataError::LabelLengthMismatch {
                    labels: l.len(),
                    points: coords.len(),
                });
            }
        }
        Ok(Self {
            coords,
            labels,
            class_id,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn with_class(mut self, class_id: u32) -> Self {
        self.class_id = Some(class_id);
        self
    }
}

/// Shift the centroid to the origin and scale so the farthest point has
/// norm 1. Errors when every point coincides (no scale to normalize by).
pub fn normalize_cloud(cloud: &PointCloud) -> Result<PointCloud, DataError> {
    let n = cloud.len() as f64;
    let mut mean = [0.0f64; 3];
    for p in &cloud.coords {
        for c in 0..3 {
            mean[c] += p[c];
        }
    }
    for c in &mut mean {
        *c /= n;
    }
    let centered: Vec<[f64; 3]> = cloud
        .coords
        .iter()
        .map(|p| [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]])
        .collect();
    let max_norm = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0f64, f64::max);
    if max_norm == 0.0 {
        return Err(DataError::ZeroScale);
    }
    let coords = centered
        .into_iter()
        .map(|p| [p[0] / max_norm, p[1] / max_norm, p[2] / max_norm])
        .collect();
    PointCloud::new(coords, cloud.labels.clone(), cloud.class_id)
}
