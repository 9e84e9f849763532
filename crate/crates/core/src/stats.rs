//! Small descriptive statistics used by calibration and evaluation.

use alloc::vec::Vec;

use crate::{Error, Result};

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("mean of an empty sample"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Variance dividing by `n` (not `n - 1`), accumulated with Welford's update
/// so that a constant sample gives exactly zero.
pub fn population_variance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("variance of an empty sample"));
    }
    let (mut m, mut m2) = (0.0, 0.0);
    for (k, &x) in values.iter().enumerate() {
        let delta = x - m;
        m += delta / (k + 1) as f64;
        m2 += delta * (x - m);
    }
    Ok(m2 / values.len() as f64)
}

/// Sorted copy using the IEEE total order.
pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Percentile `q ∈ [0, 1]` of an already sorted sample, linearly interpolating
/// between the order statistics around rank `(n - 1) q`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("percentile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(alloc::format!(
            "percentile {q} outside [0, 1]"
        )));
    }
    let rank = (sorted.len() - 1) as f64 * q;
    let lo = libm::floor(rank) as usize;
    let hi = libm::ceil(rank) as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    percentile_sorted(&sorted(values), q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_variance_of_pair() {
        assert_eq!(population_variance(&[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(population_variance(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn linear_percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(percentile(&v, 0.25).unwrap(), 2.0);
        assert_eq!(percentile(&v, 0.75).unwrap(), 4.0);
        assert_eq!(percentile(&v, 1.0).unwrap(), 100.0);
        assert!((percentile(&[0.0, 10.0], 0.9).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert!(mean(&[]).is_err());
        assert!(percentile(&[], 0.5).is_err());
    }
}
