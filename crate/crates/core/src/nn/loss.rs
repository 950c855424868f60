//! Classification and auxiliary depth losses.

use serde::{Deserialize, Serialize};

use super::NnError;
use crate::reprojection::SparseDepthMap;

/// How the auxiliary loss reduces over the valid pixels of one target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Huber threshold between the quadratic and the linear branch.
    pub delta: f64,
    /// Weight of the auxiliary depth loss; 0 disables the branch.
    pub lambda_aux: f64,
    pub reduction: AuxReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            lambda_aux: 1e-2,
            reduction: AuxReduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(NnError::NonPositiveDelta(self.delta));
        }
        if !(self.lambda_aux >= 0.0 && self.lambda_aux.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "lambda_aux must be non-negative, got {}",
                self.lambda_aux
            )));
        }
        Ok(())
    }
}

/// Huber loss: `x^2 / 2` for `|x| <= delta`, `delta (|x| - delta / 2)` beyond.
pub fn huber(x: f64, delta: f64) -> Result<f64, NnError> {
    if !(delta > 0.0) {
        return Err(NnError::NonPositiveDelta(delta));
    }
    Ok(huber_unchecked(x, delta))
}

#[inline]
pub(crate) fn huber_unchecked(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

/// Derivative of [`huber`]: `x` inside the threshold, `delta * sign(x)` outside.
#[inline]
pub fn huber_grad(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

/// Huber loss of `pred - target` over the valid target pixels only, averaged
/// over those pixels.
pub fn masked_huber_loss(
    pred: &[f64],
    target: &SparseDepthMap,
    delta: f64,
) -> Result<f64, NnError> {
    masked_huber(pred, target, delta, AuxReduction::Mean, None)
}

/// Same as [`masked_huber_loss`] and also writes `d loss / d pred` into `grad`
/// (zero at invalid pixels).
pub fn masked_huber(
    pred: &[f64],
    target: &SparseDepthMap,
    delta: f64,
    reduction: AuxReduction,
    grad: Option<&mut [f64]>,
) -> Result<f64, NnError> {
    if !(delta > 0.0) {
        return Err(NnError::NonPositiveDelta(delta));
    }
    let depths = target.depths();
    if pred.len() != depths.len() {
        return Err(NnError::ShapeMismatch(format!(
            "prediction has {} pixels, target {}x{}",
            pred.len(),
            target.width(),
            target.height()
        )));
    }
    let count = depths.iter().filter(|v| !v.is_nan()).count();
    if count == 0 {
        return Err(NnError::EmptyMask);
    }
    let norm = match reduction {
        AuxReduction::Mean => 1.0 / count as f64,
        AuxReduction::Sum => 1.0,
    };
    let mut total = 0.0;
    match grad {
        Some(g) => {
            for ((gi, &p), &t) in g.iter_mut().zip(pred).zip(depths) {
                if t.is_nan() {
                    *gi = 0.0;
                } else {
                    total += huber_unchecked(p - t, delta);
                    *gi = huber_grad(p - t, delta) * norm;
                }
            }
        }
        None => {
            for (&p, &t) in pred.iter().zip(depths) {
                if !t.is_nan() {
                    total += huber_unchecked(p - t, delta);
                }
            }
        }
    }
    Ok(total * norm)
}

/// Classification loss plus the weighted auxiliary loss.
pub fn total_loss(class_loss: f64, aux_loss: f64, lambda_aux: f64) -> f64 {
    class_loss + lambda_aux * aux_loss
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax cross-entropy of `logits` against class `label`; `grad` receives
/// `softmax - onehot`.
pub fn cross_entropy(logits: &[f64], label: usize, grad: Option<&mut [f64]>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    if let Some(g) = grad {
        for (i, (gi, &z)) in g.iter_mut().zip(logits).enumerate() {
            *gi = (z - log_sum).exp() - if i == label { 1.0 } else { 0.0 };
        }
    }
    log_sum - logits[label]
}

/// Index of the largest logit; the lowest index wins exact ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}
