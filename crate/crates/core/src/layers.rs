//! Composite network layers: per-area feature extraction, intra-region
//! context encoding by variable-size windowed convolution, inter-region
//! context encoding by spatial-similarity weighting, global pooling, the
//! classification head, and feature propagation for segmentation.

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::config::{Aggregation, GlobalPool};
use crate::geometry::{self, SimilarityMatrix};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Ordered (weight, bias) pairs of a shared multi-layer perceptron.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
}

/// Shared MLP applied per row: linear + ReLU for every layer.
pub fn mlp<S: Scalar>(tape: &mut Tape<S>, x: Var, vars: &MlpVars) -> Result<Var, AutodiffError> {
    let mut h = x;
    for &(w, b) in &vars.layers {
        h = tape.linear(h, w, b)?;
        h = tape.relu(h)?;
    }
    Ok(h)
}

/// Shared per-point MLP followed by channelwise max over the point axis:
/// [G, K, C] -> [G, out]. Exactly invariant to permutation and
/// duplication of the K points.
pub fn pointnet_layer<S: Scalar>(
    tape: &mut Tape<S>,
    points: Var,
    vars: &MlpVars,
) -> Result<Var, AutodiffError> {
    let h = mlp(tape, points, vars)?;
    tape.max_reduce(h, 1)
}

/// Number of filters per window size: `d / h_kinds` each, with the
/// remainder assigned to window size 1 so the output stays `d` wide.
pub fn filter_bank_sizes(d: usize, h_kinds: usize) -> Vec<usize> {
    let base = d / h_kinds;
    let mut sizes = vec![base; h_kinds];
    sizes[0] += d - base * h_kinds;
    sizes
}

/// Encode each region's stack of scale features [M, T, D] into an
/// [M, D] feature by variable-size windowed convolution.
///
/// `filters[h-1]` holds the size-h bank: weights [h*D, F_h] and biases
/// [F_h]. Each filter slides over every window of h consecutive scales,
/// takes a bias + ReLU per window, then the maximum over windows. The
/// per-filter outputs are concatenated in (window size ascending, filter
/// index) order.
pub fn intra_region_encode<S: Scalar>(
    tape: &mut Tape<S>,
    area_feats: Var,
    filters: &[(Var, Var)],
) -> Result<Var, AutodiffError> {
    let shape = tape.value(area_feats).shape().to_vec();
    let (m, t, d) = (shape[0], shape[1], shape[2]);
    let mut per_bank = Vec::with_capacity(filters.len());
    for (idx, &(w, b)) in filters.iter().enumerate() {
        let h = idx + 1;
        assert!(h <= t, "filter window {h} exceeds {t} scales");
        let f_h = tape.value(b).shape()[0];
        let mut windows = Vec::with_capacity(t - h + 1);
        for a in 0..=(t - h) {
            let win = tape.narrow(area_feats, 1, a, h)?;
            let flat = tape.reshape(win, vec![m, h * d])?;
            let conv = tape.linear(flat, w, b)?;
            let act = tape.relu(conv)?;
            windows.push(tape.reshape(act, vec![m, 1, f_h])?);
        }
        let stacked = tape.concat(&windows, 1)?;
        per_bank.push(tape.max_reduce(stacked, 1)?);
    }
    tape.concat(&per_bank, 1)
}

/// Baseline aggregations over the scale axis in place of the windowed
/// convolution: mean or max keep width D, concatenation widens to T*D.
pub fn aggregate_fallback<S: Scalar>(
    tape: &mut Tape<S>,
    area_feats: Var,
    mode: Aggregation,
) -> Result<Var, AutodiffError> {
    let shape = tape.value(area_feats).shape().to_vec();
    let (m, t, d) = (shape[0], shape[1], shape[2]);
    match mode {
        Aggregation::IntraConv => panic!("aggregate_fallback is only for the baseline modes"),
        Aggregation::Mean => {
            let summed = tape.sum_reduce(area_feats, 1)?;
            tape.scale(summed, S::from_f64(1.0 / t as f64))
        }
        Aggregation::Max => tape.max_reduce(area_feats, 1),
        Aggregation::Concat => tape.reshape(area_feats, vec![m, t * d]),
    }
}

/// Weight region features by spatial similarity and renormalize:
/// row j of the output is sum_b V[j][b] * r_b divided by sum_b V[j][b].
/// V is a constant; gradients flow only through the region features.
pub fn inter_region_encode<S: Scalar>(
    tape: &mut Tape<S>,
    region_feats: Var,
    sim: &SimilarityMatrix,
) -> Result<Var, AutodiffError> {
    let m = sim.v.dim();
    let weights: Vec<S> = sim.v.data().iter().map(|&v| S::from_f64(v)).collect();
    // Row sums accumulate in index order, matching the mixing order.
    let divisors: Vec<S> = (0..m)
        .map(|i| {
            let mut acc = S::zero();
            for &v in &weights[i * m..(i + 1) * m] {
                acc += v;
            }
            acc
        })
        .collect();
    let mixed = tape.mix_rows(region_feats, &weights, m)?;
    tape.row_div(mixed, &divisors)
}

/// Per-region MLP then pooling over regions into one global feature.
pub fn global_pointnet<S: Scalar>(
    tape: &mut Tape<S>,
    enhanced: Var,
    vars: &MlpVars,
    pool: GlobalPool,
) -> Result<Var, AutodiffError> {
    let m = tape.value(enhanced).shape()[0];
    let h = mlp(tape, enhanced, vars)?;
    match pool {
        GlobalPool::Max => tape.max_reduce(h, 0),
        GlobalPool::Sum => tape.sum_reduce(h, 0),
        GlobalPool::Mean => {
            let summed = tape.sum_reduce(h, 0)?;
            tape.scale(summed, S::from_f64(1.0 / m as f64))
        }
    }
}

/// Fully connected head: hidden layers with ReLU and (in training mode)
/// inverted dropout, then a final linear layer producing logits.
pub fn classification_head<S: Scalar>(
    tape: &mut Tape<S>,
    global_feat: Var,
    vars: &MlpVars,
    dropout: f64,
    mut train_rng: Option<&mut SplitMix64>,
) -> Result<Var, AutodiffError> {
    let mut h = global_feat;
    let last = vars.layers.len() - 1;
    for (i, &(w, b)) in vars.layers.iter().enumerate() {
        h = tape.linear(h, w, b)?;
        if i < last {
            h = tape.relu(h)?;
            if let Some(rng) = train_rng.as_deref_mut() {
                if dropout > 0.0 {
                    h = tape.dropout(h, dropout, rng)?;
                }
            }
        }
    }
    Ok(h)
}

/// Carry features from source points to target points by inverse squared
/// distance over the 3 nearest sources, then concatenate skip features
/// when provided. A target sitting on a source copies that source's
/// feature exactly.
pub fn feature_propagation<S: Scalar>(
    tape: &mut Tape<S>,
    target_pts: &[[f64; 3]],
    source_pts: &[[f64; 3]],
    source_feats: Var,
    skip_feats: Option<Var>,
) -> Result<Var, AutodiffError> {
    let weights = geometry::interp_weights(target_pts, source_pts, 3, geometry::INTERP_EPS)
        .map_err(|e| AutodiffError::ShapeMismatch {
            op: "feature_propagation",
            detail: e.to_string(),
        })?;
    let blended = tape.interp_rows(source_feats, &weights)?;
    match skip_feats {
        Some(skip) => tape.concat(&[blended, skip], 1),
        None => Ok(blended),
    }
}
