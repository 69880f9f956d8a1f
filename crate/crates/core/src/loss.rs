//! Classification and regression losses with range-weight application.
//!
//! Each loss returns its value together with the analytic derivative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::range::{bin_index, RangeBinning, RangeError, RangeWeights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("probability {0} outside the open interval (0, 1)")]
    DomainError(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid loss parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Range(#[from] RangeError),
}

/// Focal loss balance `alpha` and focusing exponent `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LossError::InvalidParams("alpha must lie in (0, 1)"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(LossError::InvalidParams("gamma must be >= 0"));
        }
        Ok(())
    }
}

/// Binary focal loss `-alpha_t (1 - p_t)^gamma ln(p_t)` and `d loss / d p`.
pub fn focal_loss(p: f64, target: bool, params: &LossParams) -> Result<(f64, f64), LossError> {
    params.validate()?;
    if !(p > 0.0 && p < 1.0) {
        return Err(LossError::DomainError(p));
    }
    let (pt, alpha_t, dpt_dp) = if target {
        (p, params.alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - params.alpha, -1.0)
    };
    let gamma = params.gamma;
    let q = 1.0 - pt;
    let log_pt = pt.ln();
    let modulator = q.powf(gamma);
    let loss = -alpha_t * modulator * log_pt;
    // d/dpt of q^gamma is -gamma q^(gamma-1); the term vanishes when gamma = 0.
    let dmod = if gamma == 0.0 {
        0.0
    } else {
        -gamma * q.powf(gamma - 1.0)
    };
    let dloss_dpt = -alpha_t * (dmod * log_pt + modulator / pt);
    Ok((loss, dloss_dpt * dpt_dp))
}

/// Binary cross-entropy `-ln(p_t)`.
pub fn binary_cross_entropy(p: f64, target: bool) -> Result<f64, LossError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(LossError::DomainError(p));
    }
    Ok(if target { -p.ln() } else { -(1.0 - p).ln() })
}

/// `sum |pred - target|` and its subgradient (`sign`, with `sign(0) = 0`).
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch(pred.len(), target.len()));
    }
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            loss += r.abs();
            if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, grad))
}

/// `sum_i w[bin(range_i)] * loss_i`.
pub fn range_weighted_loss(
    per_object_losses: &[f64],
    object_ranges: &[f64],
    weights: &RangeWeights,
    binning: &RangeBinning,
) -> Result<f64, LossError> {
    if per_object_losses.len() != object_ranges.len() {
        return Err(LossError::LengthMismatch(
            per_object_losses.len(),
            object_ranges.len(),
        ));
    }
    if weights.weights.len() != binning.num_bins() {
        return Err(RangeError::CountMismatch {
            expected: binning.num_bins(),
            got: weights.weights.len(),
        }
        .into());
    }
    per_object_losses
        .iter()
        .zip(object_ranges)
        .try_fold(0.0, |acc, (&loss, &range)| {
            let b = bin_index(range, binning)?;
            Ok(acc + weights.weight(b) * loss)
        })
}
