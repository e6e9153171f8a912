//! Evaluation metrics: instance accuracy and the part-IoU family.

use crate::training::TrainError;

/// Per-epoch evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Correct / total. Shape-level for classification, point-level for
    /// segmentation.
    pub accuracy: f64,
    pub per_class_accuracy: Option<Vec<f64>>,
    /// Mean IoU per category, index = category id.
    pub per_category_iou: Option<Vec<f64>>,
    /// Mean of shape IoUs over all shapes.
    pub instance_miou: Option<f64>,
}

pub fn instance_accuracy(pred: &[u32], truth: &[u32]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return 0.0;
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    correct as f64 / pred.len() as f64
}

/// One segmented shape: predicted labels, ground truth, category id.
#[derive(Debug, Clone)]
pub struct SegmentedShape {
    pub pred: Vec<u32>,
    pub truth: Vec<u32>,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouSummary {
    /// Category id -> mean shape IoU of that category's shapes. Categories
    /// with no shapes hold NaN-free zero entries and are flagged absent.
    pub per_category: Vec<f64>,
    pub instance_miou: f64,
    pub shape_ious: Vec<f64>,
}

/// IoU per the part-segmentation convention: for each part class of the
/// shape's category, IoU = |pred n truth| / |pred u truth| over the
/// shape's points, counting 1 when the part is absent from both. The
/// shape IoU averages over the category's parts; category IoU averages
/// over its shapes; instance mIoU averages over all shapes.
pub fn mean_iou(shapes: &[SegmentedShape], part_sets: &[Vec<u32>]) -> Result<IouSummary, TrainError> {
    let mut shape_ious = Vec::with_capacity(shapes.len());
    let mut per_cat_sum = vec![0.0f64; part_sets.len()];
    let mut per_cat_count = vec![0usize; part_sets.len()];
    for (i, shape) in shapes.iter().enumerate() {
        if shape.category >= part_sets.len() {
            return Err(TrainError::UnknownCategory {
                shape: i,
                category: shape.category,
            });
        }
        let parts = &part_sets[shape.category];
        for labels in [&shape.pred, &shape.truth] {
            if let Some(&bad) = labels.iter().find(|l| !parts.contains(l)) {
                return Err(TrainError::LabelOutsidePartSet {
                    shape: i,
                    label: bad,
                    category: shape.category,
                });
            }
        }
        let mut total = 0.0;
        for &part in parts {
            let mut intersection = 0usize;
            let mut union = 0usize;
            for (p, t) in shape.pred.iter().zip(&shape.truth) {
                let in_pred = *p == part;
                let in_truth = *t == part;
                if in_pred && in_truth {
                    intersection += 1;
                }
                if in_pred || in_truth {
                    union += 1;
                }
            }
            total += if union == 0 {
                1.0
            } else {
                intersection as f64 / union as f64
            };
        }
        let iou = total / parts.len() as f64;
        shape_ious.push(iou);
        per_cat_sum[shape.category] += iou;
        per_cat_count[shape.category] += 1;
    }
    let per_category = per_cat_sum
        .iter()
        .zip(&per_cat_count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let instance_miou = if shape_ious.is_empty() {
        0.0
    } else {
        shape_ious.iter().sum::<f64>() / shape_ious.len() as f64
    };
    Ok(IouSummary {
        per_category,
        instance_miou,
        shape_ious,
    })
}
