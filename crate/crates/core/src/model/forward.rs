//! Full network assembly: sampling, grouping, per-scale area features,
//! intra/inter-region context encoding, global pooling, and the
//! classification and segmentation heads.

use crate::autodiff::{AutodiffError, Gradients, Tape, Tensor, Var};
use crate::config::{Aggregation, ModelConfig, Task};
use crate::dataio::PointCloud;
use crate::geometry::{
    farthest_point_sampling, group_areas, pairwise_sqdist, similarity_matrix, to_relative,
    GeometryError,
};
use crate::layers::{self, MlpVars};
use crate::model::params::{param_specs, ParamSet};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cloud has {n} points but the largest scale needs {k_max}")]
    InsufficientPoints { n: usize, k_max: usize },
    #[error("cloud has {n} points but {m} centroids are configured")]
    TooFewForSampling { n: usize, m: usize },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: AutodiffError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("model was built for task {expected:?}")]
    WrongTask { expected: Task },
    #[error("cloud is missing {0}")]
    MissingTarget(&'static str),
}

/// Forward-pass mode. Training mode randomizes the sampling start and
/// applies dropout, both driven by the given seed; eval is deterministic
/// with the sampling start fixed at index 0.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Network with its configuration and parameters.
#[derive(Debug, Clone)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub task: Task,
    pub params: ParamSet<S>,
}

/// Parameter handles bound onto a tape for one forward pass.
struct Bound {
    all: Vec<Var>,
    area: Vec<MlpVars>,
    intra: Vec<(Var, Var)>,
    global: MlpVars,
    head: Option<MlpVars>,
    seg: Option<SegBound>,
}

struct SegBound {
    skip: MlpVars,
    prop: MlpVars,
    point: MlpVars,
}

struct Cursor {
    vars: Vec<Var>,
    pos: usize,
}

impl Cursor {
    fn pair(&mut self) -> (Var, Var) {
        let p = (self.vars[self.pos], self.vars[self.pos + 1]);
        self.pos += 2;
        p
    }

    fn mlp(&mut self, layers: usize) -> MlpVars {
        MlpVars {
            layers: (0..layers).map(|_| self.pair()).collect(),
        }
    }
}

fn stage(name: &'static str) -> impl Fn(AutodiffError) -> ModelError {
    move |source| ModelError::Stage { stage: name, source }
}

impl<S: Scalar> Model<S> {
    /// Fresh model with fan-in-scaled uniform weights.
    pub fn init(config: ModelConfig, task: Task, seed: u64) -> Self {
        let specs = param_specs(&config, task);
        Self {
            config,
            task,
            params: ParamSet::init(&specs, seed),
        }
    }

    fn bind(&self, tape: &mut Tape<S>) -> Bound {
        let all: Vec<Var> = self
            .params
            .iter()
            .map(|(_, tensor)| tape.param(tensor.clone()))
            .collect();
        let mut cursor = Cursor {
            vars: all.clone(),
            pos: 0,
        };
        let area = (0..self.config.t()).map(|_| cursor.mlp(3)).collect();
        let intra = if self.config.aggregation == Aggregation::IntraConv {
            (0..self.config.h_kinds).map(|_| cursor.pair()).collect()
        } else {
            Vec::new()
        };
        let global = cursor.mlp(3);
        let (head, seg) = match self.task {
            Task::Classify => (Some(cursor.mlp(3)), None),
            Task::Segment => (
                None,
                Some(SegBound {
                    skip: cursor.mlp(1),
                    prop: cursor.mlp(2),
                    point: cursor.mlp(3),
                }),
            ),
        };
        debug_assert_eq!(cursor.pos, all.len());
        Bound {
            all,
            area,
            intra,
            global,
            head,
            seg,
        }
    }

    /// Shared pipeline up to the enhanced region features.
    /// Returns the region feature Var and the centroid coordinates.
    fn trunk(
        &self,
        tape: &mut Tape<S>,
        cloud: &PointCloud,
        bound: &Bound,
        fps_start: usize,
    ) -> Result<(Var, Vec<[f64; 3]>), ModelError> {
        let config = &self.config;
        let n = cloud.len();
        let k_max = *config.k.last().unwrap();
        if n < k_max {
            return Err(ModelError::InsufficientPoints { n, k_max });
        }
        if n < config.m {
            return Err(ModelError::TooFewForSampling { n, m: config.m });
        }

        let centroids = farthest_point_sampling(cloud, config.m, fps_start)?;
        let region = group_areas(cloud, &centroids, &config.k)?;
        let rel = to_relative(cloud, &region);
        let centroid_pts: Vec<[f64; 3]> = centroids.iter().map(|&i| cloud.coords[i]).collect();

        // Per-scale area features, stacked into [M, T, D].
        let mut scale_feats = Vec::with_capacity(config.t());
        for (t, k_t) in config.k.iter().enumerate() {
            let mut data = Vec::with_capacity(config.m * k_t * 3);
            for region_rel in &rel {
                for p in &region_rel[t] {
                    data.extend(p.iter().map(|&c| S::from_f64(c)));
                }
            }
            let pts = tape.constant(Tensor::new(vec![config.m, *k_t, 3], data));
            let feat = layers::pointnet_layer(tape, pts, &bound.area[t]).map_err(stage("area_mlp"))?;
            scale_feats.push(
                tape.reshape(feat, vec![config.m, 1, config.d])
                    .map_err(stage("area_mlp"))?,
            );
        }
        let area_feats = tape.concat(&scale_feats, 1).map_err(stage("area_mlp"))?;

        let region_feats = if config.aggregation == Aggregation::IntraConv {
            layers::intra_region_encode(tape, area_feats, &bound.intra)
                .map_err(stage("intra_region"))?
        } else {
            layers::aggregate_fallback(tape, area_feats, config.aggregation)
                .map_err(stage("intra_region"))?
        };

        let enhanced = if config.inter_region {
            let sim = similarity_matrix(pairwise_sqdist(&centroid_pts), config.gamma)?;
            layers::inter_region_encode(tape, region_feats, &sim).map_err(stage("inter_region"))?
        } else {
            region_feats
        };
        Ok((enhanced, centroid_pts))
    }

    fn classify_on_tape(
        &self,
        tape: &mut Tape<S>,
        cloud: &PointCloud,
        mode: Mode,
    ) -> Result<(Var, Bound), ModelError> {
        if self.task != Task::Classify {
            return Err(ModelError::WrongTask { expected: self.task });
        }
        let mut rng = match mode {
            Mode::Train { seed } => Some(SplitMix64::new(seed)),
            Mode::Eval => None,
        };
        let start = rng
            .as_mut()
            .map(|r| r.below(cloud.len() as u64) as usize)
            .unwrap_or(0);
        let bound = self.bind(tape);
        let (enhanced, _) = self.trunk(tape, cloud, &bound, start)?;
        let global = layers::global_pointnet(tape, enhanced, &bound.global, self.config.global_pool)
            .map_err(stage("global_mlp"))?;
        let logits = layers::classification_head(
            tape,
            global,
            bound.head.as_ref().unwrap(),
            self.config.dropout,
            rng.as_mut(),
        )
        .map_err(stage("head"))?;
        Ok((logits, bound))
    }

    fn segment_on_tape(
        &self,
        tape: &mut Tape<S>,
        cloud: &PointCloud,
        mode: Mode,
    ) -> Result<(Var, Bound), ModelError> {
        if self.task != Task::Segment {
            return Err(ModelError::WrongTask { expected: self.task });
        }
        let mut rng = match mode {
            Mode::Train { seed } => Some(SplitMix64::new(seed)),
            Mode::Eval => None,
        };
        let start = rng
            .as_mut()
            .map(|r| r.below(cloud.len() as u64) as usize)
            .unwrap_or(0);
        let bound = self.bind(tape);
        let seg = bound.seg.as_ref().unwrap();

        // First-stage per-point skip features. Coordinates are taken
        // relative to the cloud centroid so per-point logits stay
        // translation invariant.
        let n = cloud.len();
        let mut mean = [0.0f64; 3];
        for p in &cloud.coords {
            for c in 0..3 {
                mean[c] += p[c];
            }
        }
        for c in &mut mean {
            *c /= n as f64;
        }
        let coord_data: Vec<S> = cloud
            .coords
            .iter()
            .flat_map(|p| (0..3).map(move |c| S::from_f64(p[c] - mean[c])))
            .collect();
        let pts = tape.constant(Tensor::new(vec![n, 3], coord_data));
        let skip = layers::mlp(tape, pts, &seg.skip).map_err(stage("seg_skip"))?;

        let (enhanced, centroid_pts) = self.trunk(tape, cloud, &bound, start)?;
        let global = layers::global_pointnet(tape, enhanced, &bound.global, self.config.global_pool)
            .map_err(stage("global_mlp"))?;

        // Propagation 1: broadcast the global feature onto the regions.
        let tiled = tape
            .repeat_rows(global, self.config.m)
            .map_err(stage("seg_prop"))?;
        let joined = tape.concat(&[tiled, enhanced], 1).map_err(stage("seg_prop"))?;
        let region_feats = layers::mlp(tape, joined, &seg.prop).map_err(stage("seg_prop"))?;

        // Propagation 2: interpolate region features onto every point.
        let per_point = layers::feature_propagation(
            tape,
            &cloud.coords,
            &centroid_pts,
            region_feats,
            Some(skip),
        )
        .map_err(stage("seg_interp"))?;

        // Per-point classifier: hidden layers with ReLU, linear logits.
        let (w0, b0) = seg.point.layers[0];
        let (w1, b1) = seg.point.layers[1];
        let (w2, b2) = seg.point.layers[2];
        let h = tape.linear(per_point, w0, b0).map_err(stage("seg_point"))?;
        let h = tape.relu(h).map_err(stage("seg_point"))?;
        let h = tape.linear(h, w1, b1).map_err(stage("seg_point"))?;
        let h = tape.relu(h).map_err(stage("seg_point"))?;
        let logits = tape.linear(h, w2, b2).map_err(stage("seg_point"))?;
        Ok((logits, bound))
    }

    /// Class logits for one cloud.
    pub fn forward_classify(&self, cloud: &PointCloud, mode: Mode) -> Result<Tensor<S>, ModelError> {
        let mut tape = Tape::new();
        let (logits, _) = self.classify_on_tape(&mut tape, cloud, mode)?;
        Ok(tape.value(logits).clone())
    }

    /// Per-point part logits, shape [N, num_parts].
    pub fn forward_segment(&self, cloud: &PointCloud, mode: Mode) -> Result<Tensor<S>, ModelError> {
        let mut tape = Tape::new();
        let (logits, _) = self.segment_on_tape(&mut tape, cloud, mode)?;
        Ok(tape.value(logits).clone())
    }

    /// Cross-entropy loss of one classification example.
    pub fn classify_loss(
        &self,
        cloud: &PointCloud,
        target: usize,
        mode: Mode,
    ) -> Result<S, ModelError> {
        let mut tape = Tape::new();
        let (logits, _) = self.classify_on_tape(&mut tape, cloud, mode)?;
        let row = tape
            .reshape(logits, vec![1, self.config.num_classes])
            .map_err(stage("loss"))?;
        let loss = tape
            .softmax_cross_entropy(row, &[target])
            .map_err(stage("loss"))?;
        Ok(tape.value(loss).item())
    }

    /// Loss and parameter gradients of one classification example, in
    /// parameter order.
    pub fn classify_loss_grads(
        &self,
        cloud: &PointCloud,
        target: usize,
        mode: Mode,
    ) -> Result<(S, Vec<Tensor<S>>), ModelError> {
        let mut tape = Tape::new();
        let (logits, bound) = self.classify_on_tape(&mut tape, cloud, mode)?;
        let row = tape
            .reshape(logits, vec![1, self.config.num_classes])
            .map_err(stage("loss"))?;
        let loss = tape
            .softmax_cross_entropy(row, &[target])
            .map_err(stage("loss"))?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss).map_err(stage("backward"))?;
        Ok((value, self.collect_grads(grads, &bound)))
    }

    /// Mean per-point cross-entropy of one segmentation example.
    pub fn segment_loss(
        &self,
        cloud: &PointCloud,
        labels: &[usize],
        mode: Mode,
    ) -> Result<S, ModelError> {
        let mut tape = Tape::new();
        let (logits, _) = self.segment_on_tape(&mut tape, cloud, mode)?;
        let loss = tape
            .softmax_cross_entropy(logits, labels)
            .map_err(stage("loss"))?;
        Ok(tape.value(loss).item())
    }

    /// Loss and parameter gradients of one segmentation example.
    pub fn segment_loss_grads(
        &self,
        cloud: &PointCloud,
        labels: &[usize],
        mode: Mode,
    ) -> Result<(S, Vec<Tensor<S>>), ModelError> {
        let mut tape = Tape::new();
        let (logits, bound) = self.segment_on_tape(&mut tape, cloud, mode)?;
        let loss = tape
            .softmax_cross_entropy(logits, labels)
            .map_err(stage("loss"))?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss).map_err(stage("backward"))?;
        Ok((value, self.collect_grads(grads, &bound)))
    }

    fn collect_grads(&self, mut grads: Gradients<S>, bound: &Bound) -> Vec<Tensor<S>> {
        bound
            .all
            .iter()
            .enumerate()
            .map(|(i, &v)| grads.take_or_zeros(v, self.params.tensor(i).shape()))
            .collect()
    }
}

/// Worst relative error per parameter group between analytic gradients
/// and central finite differences.
#[derive(Debug)]
pub struct GradcheckReport {
    pub per_group: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

/// Compare analytic parameter gradients against central finite
/// differences (step 1e-5) on `samples_per_group` randomly chosen
/// elements of every parameter tensor. Runs in eval mode so the loss is
/// a deterministic function of the parameters.
///
/// The check evaluates at a jittered copy of the parameters: freshly
/// initialized biases are exactly zero, which parks the centroid row
/// (relative coordinate 0) precisely on the ReLU kink where one-sided
/// curvature defeats central differences.
pub fn gradcheck(
    model: &Model<f64>,
    cloud: &PointCloud,
    class_target: usize,
    samples_per_group: usize,
    seed: u64,
) -> Result<GradcheckReport, ModelError> {
    let mut model = model.clone();
    let mut jitter = SplitMix64::new(seed ^ 0x6A77);
    for idx in 0..model.params.len() {
        for v in model.params.tensor_mut(idx).data_mut() {
            *v += jitter.uniform(-0.05, 0.05);
        }
    }
    let model = &model;
    let labels: Vec<usize> = match model.task {
        Task::Classify => Vec::new(),
        Task::Segment => cloud
            .labels
            .as_ref()
            .ok_or(ModelError::MissingTarget("per-point labels"))?
            .iter()
            .map(|&l| l as usize)
            .collect(),
    };
    let loss_of = |m: &Model<f64>| -> Result<f64, ModelError> {
        match m.task {
            Task::Classify => m.classify_loss(cloud, class_target, Mode::Eval),
            Task::Segment => m.segment_loss(cloud, &labels, Mode::Eval),
        }
    };
    let analytic = match model.task {
        Task::Classify => model.classify_loss_grads(cloud, class_target, Mode::Eval)?.1,
        Task::Segment => model.segment_loss_grads(cloud, &labels, Mode::Eval)?.1,
    };

    let h = 1e-5;
    let mut rng = SplitMix64::new(seed);
    let mut scratch = model.clone();
    let mut per_group = Vec::with_capacity(model.params.len());
    let mut max_rel_err = 0.0f64;
    for idx in 0..model.params.len() {
        let len = model.params.tensor(idx).len();
        let mut worst = 0.0f64;
        let mut kept = 0usize;
        let mut attempts = 0usize;
        let budget = samples_per_group.min(len);
        while kept < budget && attempts < budget * 8 {
            attempts += 1;
            let e = rng.below(len as u64) as usize;
            let ana = analytic[idx].data()[e];
            let mut central = |step: f64| -> Result<f64, ModelError> {
                let base = model.params.tensor(idx).data()[e];
                scratch.params.tensor_mut(idx).data_mut()[e] = base + step;
                let plus = loss_of(&scratch)?;
                scratch.params.tensor_mut(idx).data_mut()[e] = base - step;
                let minus = loss_of(&scratch)?;
                scratch.params.tensor_mut(idx).data_mut()[e] = base;
                Ok((plus - minus) / (2.0 * step))
            };
            let rel = |numeric: f64| (ana - numeric).abs() / ana.abs().max(numeric.abs()).max(1.0);
            let err = rel(central(h)?);
            if err >= 1e-6 {
                // ReLU and max switches make the difference quotient
                // invalid on intervals that straddle them. A mismatch
                // that disappears as the step shrinks is such an
                // artifact: skip the sample. Real gradient errors
                // persist at every step size and are kept.
                if rel(central(h / 100.0)?) < 1e-8 {
                    continue;
                }
            }
            worst = worst.max(err);
            kept += 1;
        }
        max_rel_err = max_rel_err.max(worst);
        per_group.push((model.params.name(idx).to_string(), worst));
    }
    Ok(GradcheckReport {
        per_group,
        max_rel_err,
    })
}
