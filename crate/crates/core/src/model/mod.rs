//! Full network assembly, parameter management, and checkpointing.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use forward::{gradcheck, GradcheckReport, Mode, Model, ModelError};
pub use params::{
    param_specs, region_width, ParamSet, ParamSpec, AREA_MLP_WIDTHS, GLOBAL_MLP_WIDTHS,
    HEAD_WIDTHS, SEG_POINT_WIDTHS, SEG_PROP_WIDTHS, SEG_SKIP_WIDTH,
};

use crate::scalar::Scalar;

impl<S: Scalar> Model<S> {
    /// Rebuild a model from checkpoint parameters, validating names and
    /// shapes against the embedded configuration.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, CheckpointError> {
        let config = ckpt.config.model.clone();
        let task = ckpt.config.train.task;
        let specs = param_specs(&config, task);
        let stored = ckpt.params::<S>();
        if stored.len() != specs.len() {
            return Err(CheckpointError::ParamMismatch(format!(
                "{} tensors stored, {} expected",
                stored.len(),
                specs.len()
            )));
        }
        for (spec, (name, tensor)) in specs.iter().zip(&stored) {
            if &spec.name != name {
                return Err(CheckpointError::ParamMismatch(format!(
                    "expected {:?}, found {:?}",
                    spec.name, name
                )));
            }
            if spec.shape != tensor.shape() {
                return Err(CheckpointError::ParamMismatch(format!(
                    "{}: shape {:?} stored, {:?} expected",
                    name,
                    tensor.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Model {
            config,
            task,
            params: ParamSet::from_entries(stored),
        })
    }

    /// Parameter tensors as checkpoint records, widened to f64.
    pub fn param_records(&self) -> Vec<(String, crate::autodiff::Tensor<f64>)> {
        self.params
            .iter()
            .map(|(name, t)| {
                (
                    format!("param.{name}"),
                    crate::autodiff::Tensor::new(t.shape().to_vec(), t.to_f64_vec()),
                )
            })
            .collect()
    }
}

/// Tiny configuration used by gradient checks and fast tests:
/// 64-point clouds, 8 regions, 2 scales, 8-wide features.
pub fn tiny_config() -> crate::config::ModelConfig {
    crate::config::ModelConfig {
        m: 8,
        k: vec![4, 8],
        d: 8,
        gamma: 100.0,
        h_kinds: 2,
        num_classes: 4,
        num_parts: 3,
        ..crate::config::ModelConfig::desk()
    }
}
