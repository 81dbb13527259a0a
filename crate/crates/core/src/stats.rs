//! MOE-aware descriptive statistics.
//!
//! Published margins of error are at the 90% confidence level, so the
//! standard error is `moe / 1.645`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CellValue;

/// z-score of the 90% confidence level.
pub const Z_90: f64 = 1.645;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("margin of error must be non-negative, got {0}")]
    NegativeMoe(f64),
    #[error("coefficient of variation is undefined for a zero estimate")]
    ZeroEstimate,
    #[error("non-finite input {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub count: usize,
    pub nulls: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Sample (n − 1) standard deviation; absent below two values.
    pub stddev: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeStats {
    pub estimate: f64,
    pub moe: f64,
    pub standard_error: f64,
    /// Absent when the estimate is zero.
    pub cv_percent: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn describe_values<'a, I>(values: I) -> DescriptiveStats
where
    I: IntoIterator<Item = &'a CellValue>,
{
    let mut nulls = 0;
    let mut numbers = Vec::new();
    for v in values {
        match v.as_f64() {
            Some(x) => numbers.push(x),
            None => nulls += 1,
        }
    }
    describe_numbers(numbers, nulls)
}

fn describe_numbers(mut numbers: Vec<f64>, nulls: usize) -> DescriptiveStats {
    let count = numbers.len();
    if count == 0 {
        return DescriptiveStats {
            count,
            nulls,
            mean: None,
            median: None,
            stddev: None,
            min: None,
            max: None,
        };
    }

    // Welford's running moments.
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &x) in numbers.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
        min = min.min(x);
        max = max.max(x);
    }
    let stddev = (count > 1).then(|| (m2 / (count - 1) as f64).sqrt());

    let mid = count / 2;
    let (lower, upper, _) = numbers.select_nth_unstable_by(mid, f64::total_cmp);
    let upper_mid = *upper;
    let median = if count % 2 == 1 {
        upper_mid
    } else {
        let lower_mid = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower_mid + upper_mid) / 2.0
    };

    DescriptiveStats {
        count,
        nulls,
        mean: Some(mean),
        median: Some(median),
        stddev,
        min: Some(min),
        max: Some(max),
    }
}

fn check_moe(moe: f64) -> Result<f64, StatsError> {
    if !moe.is_finite() {
        Err(StatsError::NonFinite(moe))
    } else if moe < 0.0 {
        Err(StatsError::NegativeMoe(moe))
    } else {
        Ok(moe)
    }
}

pub fn standard_error(moe: f64) -> Result<f64, StatsError> {
    Ok(check_moe(moe)? / Z_90)
}

/// Percent; uses the absolute estimate.
pub fn coefficient_of_variation(estimate: f64, moe: f64) -> Result<f64, StatsError> {
    let se = standard_error(moe)?;
    if !estimate.is_finite() {
        return Err(StatsError::NonFinite(estimate));
    }
    if estimate == 0.0 {
        return Err(StatsError::ZeroEstimate);
    }
    Ok(100.0 * se / estimate.abs())
}

pub fn confidence_interval(estimate: f64, moe: f64) -> Result<(f64, f64), StatsError> {
    let moe = check_moe(moe)?;
    Ok((estimate - moe, estimate + moe))
}

/// Root-sum-of-squares MOE of a sum of estimates.
pub fn aggregate_moe(moes: &[f64]) -> Result<f64, StatsError> {
    let mut sum = 0.0;
    for &m in moes {
        let m = check_moe(m)?;
        sum += m * m;
    }
    Ok(sum.sqrt())
}

pub fn moe_stats(estimate: f64, moe: f64) -> Result<MoeStats, StatsError> {
    let (ci_low, ci_high) = confidence_interval(estimate, moe)?;
    let cv_percent = match coefficient_of_variation(estimate, moe) {
        Ok(cv) => Some(cv),
        Err(StatsError::ZeroEstimate) => None,
        Err(e) => return Err(e),
    };
    Ok(MoeStats {
        estimate,
        moe,
        standard_error: standard_error(moe)?,
        cv_percent,
        ci_low,
        ci_high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nums(v: &[f64]) -> Vec<CellValue> {
        v.iter().map(|&x| CellValue::Numeric(x)).collect()
    }

    #[test]
    fn describe_examples() {
        let s = describe_values(&nums(&[1.0, 2.0, 3.0, 4.0, 5.0]));
        assert_eq!(s.count, 5);
        assert_eq!(s.median, Some(3.0));
        assert_eq!(s.mean, Some(3.0));
        assert!((s.stddev.unwrap() - 1.5811).abs() < 1e-4);
        assert_eq!((s.min, s.max), (Some(1.0), Some(5.0)));

        let mixed = vec![CellValue::Numeric(1.0), CellValue::Jam(".".into()), CellValue::Numeric(3.0)];
        let s = describe_values(&mixed);
        assert_eq!((s.count, s.nulls, s.median), (2, 1, Some(2.0)));

        let s = describe_values(&[]);
        assert_eq!((s.count, s.nulls), (0, 0));
        assert!(s.mean.is_none() && s.median.is_none() && s.stddev.is_none());

        let s = describe_values(&nums(&[7.0]));
        assert_eq!((s.median, s.stddev), (Some(7.0), None));
    }

    #[test]
    fn moe_examples() {
        assert!((standard_error(48.0).unwrap() - 29.18).abs() <= 0.01);
        assert_eq!(standard_error(1.645).unwrap(), 1.0);
        assert_eq!(standard_error(0.0).unwrap(), 0.0);
        assert_eq!(standard_error(-1.0), Err(StatsError::NegativeMoe(-1.0)));

        assert!((coefficient_of_variation(60.0, 48.0).unwrap() - 48.6).abs() <= 0.05);
        assert!((coefficient_of_variation(38220.0, 1688.0).unwrap() - 2.69).abs() <= 0.01);
        assert_eq!(coefficient_of_variation(100.0, 0.0).unwrap(), 0.0);
        assert_eq!(coefficient_of_variation(0.0, 3.0), Err(StatsError::ZeroEstimate));
        assert_eq!(
            coefficient_of_variation(-60.0, 48.0).unwrap(),
            coefficient_of_variation(60.0, 48.0).unwrap()
        );

        assert_eq!(confidence_interval(60.0, 48.0).unwrap(), (12.0, 108.0));
        assert_eq!(confidence_interval(38220.0, 1688.0).unwrap(), (36532.0, 39908.0));
        assert_eq!(confidence_interval(5.0, 0.0).unwrap(), (5.0, 5.0));
        assert!(confidence_interval(5.0, -0.5).is_err());

        assert_eq!(aggregate_moe(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(aggregate_moe(&[48.0]).unwrap(), 48.0);
        assert_eq!(aggregate_moe(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(aggregate_moe(&[1.0, -2.0]).is_err());

        let m = moe_stats(0.0, 5.0).unwrap();
        assert_eq!(m.cv_percent, None);
    }

    proptest! {
        #[test]
        fn ci_width_and_containment(e in -1e9f64..1e9, m in 0f64..1e6) {
            let (lo, hi) = confidence_interval(e, m).unwrap();
            prop_assert!(lo <= e && e <= hi);
            prop_assert!(((hi - lo) - 2.0 * m).abs() <= 1e-9 * (e.abs() + m).max(1.0));
        }

        #[test]
        fn aggregate_is_permutation_invariant_and_monotone(
            mut moes in proptest::collection::vec(0f64..1e4, 1..20),
            bump in 0f64..100.0,
            idx in 0usize..20,
        ) {
            let base = aggregate_moe(&moes).unwrap();
            let mut rev = moes.clone();
            rev.reverse();
            prop_assert!((aggregate_moe(&rev).unwrap() - base).abs() <= 1e-9 * base.max(1.0));
            let i = idx % moes.len();
            moes[i] += bump;
            prop_assert!(aggregate_moe(&moes).unwrap() >= base);
        }

        #[test]
        fn median_between_extremes(v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            let s = describe_values(&nums(&v));
            prop_assert!(s.min.unwrap() <= s.median.unwrap() && s.median.unwrap() <= s.max.unwrap());
        }
    }
}
