//! Bias-corrected Adam updates and the stepped learning-rate schedule.

use crate::autodiff::Tensor;
use crate::model::ParamSet;
use crate::scalar::Scalar;
use crate::training::TrainError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
/// The schedule never decays below this rate.
pub const LR_FLOOR: f64 = 1e-5;
/// Multiplicative decay applied every [`LR_EPOCH_STEP`] epochs.
pub const LR_DECAY: f64 = 0.3;
pub const LR_EPOCH_STEP: usize = 20;

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimState<S> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(params: &ParamSet<S>) -> Self {
        let zeros: Vec<Tensor<S>> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Learning rate for an epoch: `lr0 * 0.3^(epoch / 20)`, floored.
pub fn lr_schedule(lr0: f64, epoch: usize) -> f64 {
    let decayed = lr0 * LR_DECAY.powi((epoch / LR_EPOCH_STEP) as i32);
    decayed.max(LR_FLOOR)
}

/// One standard bias-corrected Adam update over every parameter tensor.
/// Gradients must align with the parameter order; a non-finite gradient
/// aborts with the offending parameter's name.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &[Tensor<S>],
    state: &mut OptimState<S>,
    lr: f64,
) -> Result<(), TrainError> {
    assert_eq!(grads.len(), params.len(), "gradient/parameter count mismatch");
    state.step += 1;
    let t = state.step as i32;
    let beta1 = S::from_f64(BETA1);
    let beta2 = S::from_f64(BETA2);
    let one_m_beta1 = S::from_f64(1.0 - BETA1);
    let one_m_beta2 = S::from_f64(1.0 - BETA2);
    let corr1 = S::from_f64(1.0 - BETA1.powi(t));
    let corr2 = S::from_f64(1.0 - BETA2.powi(t));
    let eps = S::from_f64(EPSILON);
    let lr_s = S::from_f64(lr);

    for idx in 0..params.len() {
        let grad = &grads[idx];
        if !grad.data().iter().all(|g| g.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                param: params.name(idx).to_string(),
            });
        }
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        let theta = params.tensor_mut(idx).data_mut();
        for ((slot, g), (m_i, v_i)) in theta
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m_i = beta1 * *m_i + one_m_beta1 * *g;
            *v_i = beta2 * *v_i + one_m_beta2 * *g * *g;
            let m_hat = *m_i / corr1;
            let v_hat = *v_i / corr2;
            *slot -= lr_s * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
