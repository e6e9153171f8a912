//! Learnable parameter registry with a stable name order, so gradients,
//! optimizer state, and checkpoints all line up positionally.

use crate::autodiff::Tensor;
use crate::config::{Aggregation, ModelConfig, Task};
use crate::layers::filter_bank_sizes;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Hidden widths of the per-area point MLP (input is 3 coordinates).
pub const AREA_MLP_WIDTHS: [usize; 2] = [64, 128];
/// Hidden widths of the global region MLP, ending in the global feature.
pub const GLOBAL_MLP_WIDTHS: [usize; 3] = [256, 512, 1024];
/// Hidden widths of the classification head.
pub const HEAD_WIDTHS: [usize; 2] = [512, 256];
/// Width of the per-point skip feature MLP used by segmentation.
pub const SEG_SKIP_WIDTH: usize = 32;
/// Widths of the region-level propagation MLP.
pub const SEG_PROP_WIDTHS: [usize; 2] = [256, 128];
/// Hidden widths of the per-point segmentation MLP.
pub const SEG_POINT_WIDTHS: [usize; 2] = [256, 128];

/// One named parameter tensor: shape plus the fan-in used for init.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn mlp_specs(prefix: &str, widths: &[usize], specs: &mut Vec<ParamSpec>) {
    for (i, pair) in widths.windows(2).enumerate() {
        specs.push(ParamSpec {
            name: format!("{prefix}.l{i}.w"),
            shape: vec![pair[0], pair[1]],
            fan_in: pair[0],
        });
        specs.push(ParamSpec {
            name: format!("{prefix}.l{i}.b"),
            shape: vec![pair[1]],
            fan_in: pair[0],
        });
    }
}

/// Region feature width entering the global MLP: D, or T*D when the
/// concatenation fallback is active.
pub fn region_width(config: &ModelConfig) -> usize {
    match config.aggregation {
        Aggregation::Concat => config.t() * config.d,
        _ => config.d,
    }
}

/// Every learnable tensor of the network for `task`, in a fixed order.
pub fn param_specs(config: &ModelConfig, task: Task) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let d = config.d;
    for t in 0..config.t() {
        let widths = [3, AREA_MLP_WIDTHS[0], AREA_MLP_WIDTHS[1], d];
        mlp_specs(&format!("area{t}"), &widths, &mut specs);
    }
    if config.aggregation == Aggregation::IntraConv {
        for (idx, f_h) in filter_bank_sizes(d, config.h_kinds).into_iter().enumerate() {
            let h = idx + 1;
            specs.push(ParamSpec {
                name: format!("intra.h{h}.w"),
                shape: vec![h * d, f_h],
                fan_in: h * d,
            });
            specs.push(ParamSpec {
                name: format!("intra.h{h}.b"),
                shape: vec![f_h],
                fan_in: h * d,
            });
        }
    }
    let d_region = region_width(config);
    let global_widths = [
        d_region,
        GLOBAL_MLP_WIDTHS[0],
        GLOBAL_MLP_WIDTHS[1],
        GLOBAL_MLP_WIDTHS[2],
    ];
    mlp_specs("global", &global_widths, &mut specs);
    match task {
        Task::Classify => {
            let widths = [
                GLOBAL_MLP_WIDTHS[2],
                HEAD_WIDTHS[0],
                HEAD_WIDTHS[1],
                config.num_classes,
            ];
            mlp_specs("head", &widths, &mut specs);
        }
        Task::Segment => {
            mlp_specs("seg.skip", &[3, SEG_SKIP_WIDTH], &mut specs);
            let prop_widths = [
                GLOBAL_MLP_WIDTHS[2] + d_region,
                SEG_PROP_WIDTHS[0],
                SEG_PROP_WIDTHS[1],
            ];
            mlp_specs("seg.prop", &prop_widths, &mut specs);
            let point_widths = [
                SEG_PROP_WIDTHS[1] + SEG_SKIP_WIDTH,
                SEG_POINT_WIDTHS[0],
                SEG_POINT_WIDTHS[1],
                config.num_parts,
            ];
            mlp_specs("seg.point", &point_widths, &mut specs);
        }
    }
    specs
}

/// Ordered, named parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamSet<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ParamSet<S> {
    /// Fan-in-scaled uniform init for weights (bound sqrt(6 / fan_in)),
    /// zero biases. Values are drawn in f64 in spec order, so every
    /// precision starts from the same underlying stream.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let entries = specs
            .iter()
            .map(|spec| {
                let len: usize = spec.shape.iter().product();
                let tensor = if spec.name.ends_with(".b") {
                    Tensor::zeros(spec.shape.clone())
                } else {
                    let bound = (6.0 / spec.fan_in as f64).sqrt();
                    Tensor::new(
                        spec.shape.clone(),
                        (0..len)
                            .map(|_| S::from_f64(rng.uniform(-bound, bound)))
                            .collect(),
                    )
                };
                (spec.name.clone(), tensor)
            })
            .collect();
        Self { entries }
    }

    pub fn from_entries(entries: Vec<(String, Tensor<S>)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor<S>)> {
        self.entries.iter()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<S> {
        &self.entries[idx].1
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<S> {
        &mut self.entries[idx].1
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_cover_both_tasks_with_stable_order() {
        let config = ModelConfig::desk();
        let cls = param_specs(&config, Task::Classify);
        let seg = param_specs(&config, Task::Segment);
        // Trunk specs are shared and identically ordered.
        let trunk_len = cls.len() - 6; // head is 3 layers x (w, b)
        assert_eq!(cls[..trunk_len], seg[..trunk_len]);
        assert!(cls.iter().any(|s| s.name == "head.l2.w"));
        assert!(seg.iter().any(|s| s.name == "seg.point.l2.w"));
        // Filter banks cover the region width.
        let total: usize = cls
            .iter()
            .filter(|s| s.name.starts_with("intra.") && s.name.ends_with(".b"))
            .map(|s| s.shape[0])
            .sum();
        assert_eq!(total, config.d);
    }

    #[test]
    fn fallback_aggregations_drop_filters_and_widen_concat() {
        let mut config = ModelConfig::desk();
        config.aggregation = Aggregation::Mean;
        let specs = param_specs(&config, Task::Classify);
        assert!(specs.iter().all(|s| !s.name.starts_with("intra.")));

        config.aggregation = Aggregation::Concat;
        let specs = param_specs(&config, Task::Classify);
        let global0 = specs.iter().find(|s| s.name == "global.l0.w").unwrap();
        assert_eq!(global0.shape[0], config.t() * config.d);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let config = ModelConfig::desk();
        let specs = param_specs(&config, Task::Classify);
        let a: ParamSet<f64> = ParamSet::init(&specs, 42);
        let b: ParamSet<f64> = ParamSet::init(&specs, 42);
        let c: ParamSet<f64> = ParamSet::init(&specs, 43);
        for ((_, ta), (_, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(ta.data(), tb.data());
        }
        assert!(a.iter().zip(c.iter()).any(|((_, x), (_, y))| x.data() != y.data()));
        for (spec, (name, tensor)) in specs.iter().zip(a.iter()) {
            assert_eq!(&spec.name, name);
            if name.ends_with(".b") {
                assert!(tensor.data().iter().all(|&v| v == 0.0));
            } else {
                let bound = (6.0 / spec.fan_in as f64).sqrt();
                assert!(tensor.data().iter().all(|&v| v.abs() <= bound));
            }
        }
    }
}
