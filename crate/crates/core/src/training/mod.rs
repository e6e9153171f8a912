//! Optimization loop, learning-rate schedule, metrics, datasets, and the
//! parameter-sweep runner.

mod adam;
mod metrics;
mod sweep;
mod trainer;

pub use adam::{adam_step, lr_schedule, OptimState, BETA1, BETA2, EPSILON, LR_FLOOR};
pub use metrics::{instance_accuracy, mean_iou, IouSummary, MetricsReport, SegmentedShape};
pub use sweep::{format_sweep_table, preset_grid, sweep, SweepRow};
pub use trainer::{train, EpochMetrics, TrainOutcome, Trainer};

use crate::config::ConfigError;
use crate::dataio::{
    gen_synthetic, load_manifest, load_xyz, normalize_cloud, DataError, DatasetManifest,
    PointCloud, ShapeKind, Split,
};
use crate::model::{CheckpointError, ModelError};
use crate::rng::SplitMix64;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite gradient in parameter {param}; aborting")]
    NonFiniteGradient { param: String },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("dataset uses {found} classes but the model is configured for {configured}")]
    ClassCountMismatch { found: usize, configured: usize },
    #[error("cloud {index} is missing its {what}")]
    MissingAnnotation { index: usize, what: &'static str },
    #[error("shape {shape}: label {label} outside category {category}'s part set")]
    LabelOutsidePartSet {
        shape: usize,
        label: u32,
        category: usize,
    },
    #[error("shape {shape}: unknown category {category}")]
    UnknownCategory { shape: usize, category: usize },
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("unknown sweep preset {0:?}")]
    UnknownPreset(String),
}

/// In-memory dataset of normalized clouds with their annotations.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
}

impl Dataset {
    /// Load every manifest entry, normalizing each cloud and attaching
    /// its class id.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self, DataError> {
        let clouds = manifest
            .entries
            .iter()
            .map(|entry| {
                let cloud = load_xyz(&entry.path)?;
                Ok(normalize_cloud(&cloud)?.with_class(entry.class_id))
            })
            .collect::<Result<Vec<_>, DataError>>()?;
        Ok(Self { clouds })
    }

    pub fn from_manifest_file(path: &Path, split: Split) -> Result<Self, DataError> {
        Self::from_manifest(&load_manifest(path, split)?)
    }

    /// Four-way shape classification corpus: `per_class` clouds of every
    /// kind, normalized, class id = kind index.
    pub fn synthetic_classification(
        per_class: usize,
        points: usize,
        noise: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        let mut rng = SplitMix64::new(seed);
        let mut clouds = Vec::with_capacity(per_class * ShapeKind::ALL.len());
        for _ in 0..per_class {
            for (class, &kind) in ShapeKind::ALL.iter().enumerate() {
                let cloud = gen_synthetic(kind, points, noise, rng.next_u64())?;
                clouds.push(normalize_cloud(&cloud)?.with_class(class as u32));
            }
        }
        Ok(Self { clouds })
    }

    /// Part-labeled corpus over the segmentation kinds (cylinder, twin
    /// spheres); class id = index into [`ShapeKind::SEGMENTATION`].
    pub fn synthetic_segmentation(
        per_kind: usize,
        points: usize,
        noise: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        let mut rng = SplitMix64::new(seed);
        let mut clouds = Vec::with_capacity(per_kind * ShapeKind::SEGMENTATION.len());
        for _ in 0..per_kind {
            for (class, &kind) in ShapeKind::SEGMENTATION.iter().enumerate() {
                let cloud = gen_synthetic(kind, points, noise, rng.next_u64())?;
                clouds.push(normalize_cloud(&cloud)?.with_class(class as u32));
            }
        }
        Ok(Self { clouds })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Number of classes implied by the annotations (max id + 1).
    pub fn num_classes(&self) -> usize {
        self.clouds
            .iter()
            .filter_map(|c| c.class_id)
            .max()
            .map_or(0, |m| m as usize + 1)
    }

    /// Distinct part labels per category, sorted, derived from the data.
    pub fn part_sets(&self) -> Vec<Vec<u32>> {
        let cats = self.num_classes();
        let mut sets = vec![std::collections::BTreeSet::new(); cats];
        for cloud in &self.clouds {
            if let (Some(class), Some(labels)) = (cloud.class_id, cloud.labels.as_ref()) {
                sets[class as usize].extend(labels.iter().copied());
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}
