//! Benefit-estimation error and unreliable-sample recall.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::stats;
use crate::{Error, Result};

/// Training-error quantile above which a sample counts as unreliable.
pub const UNRELIABLE_QUANTILE: f64 = 0.9;

/// `|B_hat - B| / c(q, I0)`.
pub fn be_error(estimated_benefit: f64, true_benefit: f64, base_cost: f64) -> Result<f64> {
    if !(base_cost > 0.0) {
        return Err(Error::NonPositiveBaseCost(base_cost));
    }
    Ok(libm::fabs(estimated_benefit - true_benefit) / base_cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl ErrorSummary {
    pub fn of(errors: &[f64]) -> Result<Self> {
        let sorted = stats::sorted(errors);
        Ok(Self {
            count: errors.len(),
            mean: stats::mean(errors)?,
            p50: stats::percentile_sorted(&sorted, 0.50)?,
            p95: stats::percentile_sorted(&sorted, 0.95)?,
            p99: stats::percentile_sorted(&sorted, 0.99)?,
            max: *sorted.last().ok_or(Error::Empty("errors"))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub unreliable: usize,
    pub caught: usize,
    /// `None` when no sample is unreliable.
    pub recall: Option<f64>,
}

/// Error threshold separating unreliable samples.
pub fn unreliable_threshold(train_errors: &[f64]) -> Result<f64> {
    stats::percentile(train_errors, UNRELIABLE_QUANTILE)
}

/// Fraction of samples with `error > threshold` that are flagged.
pub fn unreliable_recall(threshold: f64, errors: &[f64], flags: &[bool]) -> Result<Recall> {
    if errors.len() != flags.len() {
        return Err(Error::DimensionMismatch {
            expected: errors.len(),
            actual: flags.len(),
        });
    }
    if errors.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let (mut unreliable, mut caught) = (0, 0);
    for (&e, &f) in errors.iter().zip(flags) {
        if e > threshold {
            unreliable += 1;
            caught += usize::from(f);
        }
    }
    let recall = (unreliable > 0).then(|| caught as f64 / unreliable as f64);
    Ok(Recall {
        unreliable,
        caught,
        recall,
    })
}

/// Picks `values[i]` for each `i` in `ids`.
pub(crate) fn gather<T: Copy>(values: &[T], ids: &[usize]) -> Vec<T> {
    ids.iter().map(|&i| values[i]).collect()
}
