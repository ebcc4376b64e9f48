//! Training losses (MSE, weighted MSE) and evaluation metrics (RMSE, L∞).
//!
//! L∞ here is always the empirical maximum over a finite sample; no attempt
//! is made to maximize the error over the continuous domain.

use crate::error::{Error, Result};

/// Loss used when fitting one network.
///
/// `Wmse` weights are fixed for the lifetime of an optimization run; they are
/// built once from the stage targets with [`residual_weights`].
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    Mse,
    Wmse(Vec<f64>),
}

impl LossSpec {
    /// Weighted loss with weights `1 + |r̂_k|` for the given normalized targets.
    pub fn weighted_from_residuals(normalized: &[f64]) -> Self {
        LossSpec::Wmse(residual_weights(normalized))
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match self {
            LossSpec::Mse => None,
            LossSpec::Wmse(w) => Some(w),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Mse => "mse",
            LossSpec::Wmse(_) => "wmse",
        }
    }
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Empty("metric over zero samples"));
    }
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "prediction/target",
            expected: target.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        acc += d * d;
    }
    Ok(acc / pred.len() as f64)
}

pub fn wmse(pred: &[f64], target: &[f64], weights: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    if weights.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            context: "wmse weights",
            expected: pred.len(),
            got: weights.len(),
        });
    }
    let mut acc = 0.0;
    for ((p, t), w) in pred.iter().zip(target).zip(weights) {
        let d = p - t;
        acc += w * (d * d);
    }
    Ok(acc / pred.len() as f64)
}

/// `w_k = 1 + |r̂_k|`.
pub fn residual_weights(normalized_residuals: &[f64]) -> Vec<f64> {
    normalized_residuals.iter().map(|r| 1.0 + r.abs()).collect()
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    mse(pred, target).map(f64::sqrt)
}

pub fn linf(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .fold(0.0_f64, |m, (p, t)| m.max((p - t).abs())))
}

/// RMSE and L∞ of one prediction set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub linf: f64,
}

impl Metrics {
    pub fn of(pred: &[f64], target: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(pred, target)?,
            linf: linf(pred, target)?,
        })
    }
}
