//! Uncertainty quantities, threshold calibration and the result filter.
//!
//! - `U1` is the slot-averaged (optionally weighted) reconstruction error of
//!   the decoder.
//! - `U2` is the population variance of the Monte-Carlo predictions.
//! - Thresholds follow the IQR rule `min(P75 + alpha (P75 - P25), max)` over
//!   the uncertainties observed on the training set.
//! - The filter returns the model estimate only when every active
//!   uncertainty is within its threshold, and the what-if estimate otherwise.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::estimator::{EstimatorModel, PredictionSet};
use crate::featurize::FeatureSet;
use crate::stats;
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 1.3;
pub const DEFAULT_UPDATE_WINDOW: usize = 500;
pub const DEFAULT_UPDATE_FRACTION: f64 = 0.3;

/// `U1 = (1/t) sum_i wMSE(v_i, v_hat_i)` over `t` vectors of `dim` coordinates,
/// where `wMSE(a, b) = (1/dim) sum_j w_j (a_j - b_j)^2`. `weights = None` is uniform.
pub fn u1_of(v1: &[f64], v1_hat: &[f64], dim: usize, weights: Option<&[f64]>) -> Result<f64> {
    if v1.len() != v1_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: v1.len(),
            actual: v1_hat.len(),
        });
    }
    if dim == 0 || v1.is_empty() || v1.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v1.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: w.len(),
            });
        }
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::InvalidArgument(
                "reconstruction weights must be nonnegative".into(),
            ));
        }
    }
    let t = v1.len() / dim;
    let total: f64 = v1
        .chunks_exact(dim)
        .zip(v1_hat.chunks_exact(dim))
        .map(|(a, b)| {
            let sq: f64 = a
                .iter()
                .zip(b)
                .enumerate()
                .map(|(j, (x, y))| weights.map_or(1.0, |w| w[j]) * (x - y) * (x - y))
                .sum();
            sq / dim as f64
        })
        .sum();
    Ok(total / t as f64)
}

/// Population variance of the Monte-Carlo outputs.
pub fn u2_of(samples: &[f64]) -> Result<f64> {
    stats::population_variance(samples)
}

/// Summary of the calibration sample for one uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub p25: f64,
    pub p75: f64,
    pub max: f64,
    pub count: usize,
}

/// IQR threshold `min(P75 + alpha (P75 - P25), max)`.
pub fn calibrate(values: &[f64], alpha: f64) -> Result<Calibration> {
    if values.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least 4 values, got {}",
            values.len()
        )));
    }
    check_alpha(alpha)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "calibration values must be finite".into(),
        ));
    }
    let sorted = stats::sorted(values);
    let p25 = stats::percentile_sorted(&sorted, 0.25)?;
    let p75 = stats::percentile_sorted(&sorted, 0.75)?;
    let max = sorted[sorted.len() - 1];
    Ok(Calibration {
        threshold: (p75 + alpha * (p75 - p25)).min(max),
        p25,
        p75,
        max,
        count: values.len(),
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(1.0..=1.5).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} outside [1, 1.5]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Flag on `U1 > theta1` or `U2 > theta2`.
    Hybrid,
    /// `U2` is never computed; flag on `U1 > theta1` only.
    U1Only,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub alpha: f64,
    pub mode: FilterMode,
    pub u1: Option<Calibration>,
    pub u2: Option<Calibration>,
}

impl FilterConfig {
    pub fn new(alpha: f64, mode: FilterMode) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            alpha,
            mode,
            u1: None,
            u2: None,
        })
    }

    /// Calibrates from training-set uncertainties. `u2` is required in hybrid mode.
    pub fn calibrate(&mut self, u1: &[f64], u2: Option<&[f64]>) -> Result<()> {
        let c1 = calibrate(u1, self.alpha)?;
        let c2 = match (self.mode, u2) {
            (FilterMode::Hybrid, Some(v)) => Some(calibrate(v, self.alpha)?),
            (FilterMode::Hybrid, None) => {
                return Err(Error::InvalidArgument(
                    "hybrid calibration needs U2 values".into(),
                ))
            }
            (FilterMode::U1Only, Some(v)) => Some(calibrate(v, self.alpha)?),
            (FilterMode::U1Only, None) => None,
        };
        self.u1 = Some(c1);
        self.u2 = c2;
        Ok(())
    }

    pub fn calibrated(
        alpha: f64,
        mode: FilterMode,
        u1: &[f64],
        u2: Option<&[f64]>,
    ) -> Result<Self> {
        let mut cfg = Self::new(alpha, mode)?;
        cfg.calibrate(u1, u2)?;
        Ok(cfg)
    }

    /// Fixed thresholds, bypassing calibration.
    pub fn with_thresholds(mode: FilterMode, theta1: f64, theta2: Option<f64>) -> Result<Self> {
        let fixed = |t: f64| Calibration {
            threshold: t,
            p25: t,
            p75: t,
            max: t,
            count: 0,
        };
        if !(theta1 >= 0.0) || theta2.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::InvalidArgument(
                "thresholds must be nonnegative".into(),
            ));
        }
        Ok(Self {
            alpha: DEFAULT_ALPHA,
            mode,
            u1: Some(fixed(theta1)),
            u2: theta2.map(fixed),
        })
    }

    pub fn is_calibrated(&self) -> bool {
        self.u1.is_some() && (self.mode == FilterMode::U1Only || self.u2.is_some())
    }

    pub fn theta1(&self) -> Option<f64> {
        self.u1.map(|c| c.threshold)
    }

    pub fn theta2(&self) -> Option<f64> {
        self.u2.map(|c| c.threshold)
    }

    /// Same thresholds, different mode.
    pub fn in_mode(&self, mode: FilterMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    /// Flags for the given uncertainties. In `U1Only` mode `U2` is ignored.
    pub fn flags(&self, u1: f64, u2: Option<f64>) -> Result<(bool, bool)> {
        let theta1 = self.theta1().ok_or(Error::Uncalibrated)?;
        let flag_u1 = u1 > theta1;
        let flag_u2 = match self.mode {
            FilterMode::U1Only => false,
            FilterMode::Hybrid => {
                let theta2 = self.theta2().ok_or(Error::Uncalibrated)?;
                let u2 =
                    u2.ok_or_else(|| Error::InvalidArgument("hybrid filtering needs U2".into()))?;
                u2 > theta2
            }
        };
        Ok((flag_u1, flag_u2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Model,
    Whatif,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    /// Model estimate (MC mean in hybrid mode, plain output in U1-only mode).
    pub prediction: f64,
    pub u1: f64,
    pub u2: Option<f64>,
    pub flag_u1: bool,
    pub flag_u2: bool,
    pub source: Source,
}

impl UncertaintyReport {
    pub fn flagged(&self) -> bool {
        self.flag_u1 || self.flag_u2
    }
}

/// Outcome of [`filter`]: the report and the value handed to the enumerator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Filtered {
    pub report: UncertaintyReport,
    pub value: f64,
}

/// Applies the result filter. `whatif` runs only when falling back.
pub fn filter<F>(
    prediction: f64,
    u1: f64,
    u2: Option<f64>,
    config: &FilterConfig,
    whatif: F,
) -> Result<Filtered>
where
    F: FnOnce() -> Result<f64>,
{
    if !config.is_calibrated() {
        return Err(Error::Uncalibrated);
    }
    let (flag_u1, flag_u2) = config.flags(u1, u2)?;
    let u2 = match config.mode {
        FilterMode::Hybrid => u2,
        FilterMode::U1Only => None,
    };
    let (source, value) = if flag_u1 || flag_u2 {
        (Source::Whatif, whatif()?)
    } else {
        (Source::Model, prediction)
    };
    Ok(Filtered {
        report: UncertaintyReport {
            prediction,
            u1,
            u2,
            flag_u1,
            flag_u2,
            source,
        },
        value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateSignal {
    None,
    /// Fallbacks are mostly reconstruction-driven: collect data and retrain.
    RetrainData,
    /// Fallbacks are mostly variance-driven: revisit features and model design.
    RedesignFeatures,
}

/// Signal for a window of reports: when the fallback fraction exceeds
/// `fraction`, the more frequent flag among fallbacks decides (ties go to
/// `RetrainData`).
pub fn update_signal(window: &[UncertaintyReport], fraction: f64) -> Result<UpdateSignal> {
    if window.is_empty() {
        return Err(Error::Empty("update window"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside [0, 1]"
        )));
    }
    let fallbacks: Vec<&UncertaintyReport> = window
        .iter()
        .filter(|r| r.source == Source::Whatif)
        .collect();
    if (fallbacks.len() as f64) / (window.len() as f64) <= fraction {
        return Ok(UpdateSignal::None);
    }
    let by_u1 = fallbacks.iter().filter(|r| r.flag_u1).count();
    let by_u2 = fallbacks.iter().filter(|r| r.flag_u2).count();
    Ok(if by_u1 >= by_u2 {
        UpdateSignal::RetrainData
    } else {
        UpdateSignal::RedesignFeatures
    })
}

/// Sliding window of recent reports.
#[derive(Debug, Clone)]
pub struct UpdateMonitor {
    capacity: usize,
    fraction: f64,
    window: VecDeque<UncertaintyReport>,
}

impl Default for UpdateMonitor {
    fn default() -> Self {
        Self::new(DEFAULT_UPDATE_WINDOW, DEFAULT_UPDATE_FRACTION).expect("defaults are valid")
    }
}

impl UpdateMonitor {
    pub fn new(capacity: usize, fraction: f64) -> Result<Self> {
        if capacity == 0 || !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(
                "window must be positive and fraction in [0, 1]".into(),
            ));
        }
        Ok(Self {
            capacity,
            fraction,
            window: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, report: UncertaintyReport) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(report);
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn signal(&mut self) -> Result<UpdateSignal> {
        update_signal(self.window.make_contiguous(), self.fraction)
    }
}

/// Everything the filter needs for one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    /// Plain (dropout-free) prediction.
    pub prediction: f64,
    pub u1: f64,
    pub u2: Option<f64>,
    pub mc: Option<PredictionSet>,
}

/// Runs the model once for `U1` and, when `with_u2`, `mc_passes` times for `U2`.
pub fn assess(
    model: &EstimatorModel,
    fs: &FeatureSet,
    weights: Option<&[f64]>,
    with_u2: bool,
) -> Result<Assessment> {
    let enc = model.encode(fs)?;
    let prediction = model.predict_plain(&enc.pooled)?;
    let v1_hat = model.reconstruct(&enc.blocks)?;
    let u1 = u1_of(&fs.v1, &v1_hat, fs.dim1, weights)?;
    let mc = if with_u2 {
        let mut rng = model.mc_stream(fs);
        Some(model.predict_mc(&enc.pooled, model.mc_passes, &mut rng)?)
    } else {
        None
    };
    Ok(Assessment {
        prediction,
        u1,
        u2: mc.as_ref().map(|m| m.variance),
        mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rel_eq(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn u1_worked_example() {
        let v = [1.0, 0.0, 0.0, 2.0];
        let v_hat = [1.0, 0.0, 0.0, 0.0];
        assert!(rel_eq(u1_of(&v, &v_hat, 2, None).unwrap(), 1.0));
        assert_eq!(u1_of(&v, &v, 2, None).unwrap(), 0.0);
        assert!(rel_eq(
            u1_of(&v, &v_hat, 2, Some(&[2.0, 2.0])).unwrap(),
            2.0
        ));
        assert!(u1_of(&v, &v_hat[..2], 2, None).is_err());
        assert!(u1_of(&v, &v_hat, 2, Some(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn u2_examples() {
        assert_eq!(u2_of(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(u2_of(&[0.0, 2.0]).unwrap(), 1.0);
        assert!(rel_eq(u2_of(&[0.0, 6.0]).unwrap(), 9.0));
        assert!(u2_of(&[]).is_err());
    }

    #[test]
    fn iqr_threshold() {
        let c = calibrate(&[1.0, 2.0, 3.0, 4.0, 100.0], 1.3).unwrap();
        assert_eq!((c.p25, c.p75, c.max), (2.0, 4.0, 100.0));
        assert!(rel_eq(c.threshold, 6.6));
        assert_eq!(calibrate(&[0.5; 6], 1.3).unwrap().threshold, 0.5);
        assert!(calibrate(&[1.0, 2.0, 3.0], 1.3).is_err());
        assert!(calibrate(&[1.0, 2.0, 3.0, 4.0], 2.0).is_err());
    }

    #[test]
    fn filter_rule() {
        let cfg = FilterConfig::with_thresholds(FilterMode::Hybrid, 0.2, Some(0.5)).unwrap();
        let out = filter(0.7, 0.1, Some(0.3), &cfg, || panic!("what-if must not run")).unwrap();
        assert_eq!((out.report.source, out.value), (Source::Model, 0.7));

        let out = filter(0.7, 0.3, Some(0.0), &cfg, || Ok(0.4)).unwrap();
        assert_eq!((out.report.source, out.value), (Source::Whatif, 0.4));
        assert!(out.report.flag_u1 && !out.report.flag_u2);

        let u1_only = cfg.in_mode(FilterMode::U1Only);
        let out = filter(0.7, 0.1, None, &u1_only, || panic!("what-if must not run")).unwrap();
        assert_eq!(out.report.source, Source::Model);
        assert_eq!(out.report.u2, None);
    }

    #[test]
    fn uncalibrated_filter_errors() {
        let cfg = FilterConfig::new(1.3, FilterMode::Hybrid).unwrap();
        assert!(matches!(
            filter(0.1, 0.1, Some(0.1), &cfg, || Ok(0.0)),
            Err(Error::Uncalibrated)
        ));
    }

    fn report(source: Source, flag_u1: bool, flag_u2: bool) -> UncertaintyReport {
        UncertaintyReport {
            prediction: 0.0,
            u1: 0.0,
            u2: Some(0.0),
            flag_u1,
            flag_u2,
            source,
        }
    }

    #[test]
    fn update_signals() {
        let calm = vec![report(Source::Model, false, false); 10];
        assert_eq!(update_signal(&calm, 0.3).unwrap(), UpdateSignal::None);

        let mut w = vec![report(Source::Model, false, false); 4];
        w.extend(vec![report(Source::Whatif, true, false); 6]);
        assert_eq!(update_signal(&w, 0.3).unwrap(), UpdateSignal::RetrainData);

        let mut w = vec![report(Source::Model, false, false); 4];
        w.extend(vec![report(Source::Whatif, false, true); 6]);
        assert_eq!(
            update_signal(&w, 0.3).unwrap(),
            UpdateSignal::RedesignFeatures
        );

        assert!(update_signal(&[], 0.3).is_err());
    }

    #[test]
    fn monitor_keeps_a_bounded_window() {
        let mut m = UpdateMonitor::new(3, 0.5).unwrap();
        for _ in 0..5 {
            m.push(report(Source::Whatif, false, true));
        }
        assert_eq!(m.len(), 3);
        assert_eq!(m.signal().unwrap(), UpdateSignal::RedesignFeatures);
        for _ in 0..3 {
            m.push(report(Source::Model, false, false));
        }
        assert_eq!(m.signal().unwrap(), UpdateSignal::None);
    }
}
