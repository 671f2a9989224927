//! Multi-seed aggregation: mean, sample standard deviation and Student-t
//! confidence intervals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::protocol::RobustnessTable;

/// CDF of Student's t with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse CDF of Student's t, found by bisection on [`t_cdf`].
pub fn t_quantile(p: f64, df: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Stats(format!("probability {p} outside (0, 1)")));
    }
    if df == 0 {
        return Err(Error::Stats("degrees of freedom must be >= 1".into()));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return Ok(-t_quantile(1.0 - p, df)?);
    }
    let df = f64::from(df);
    let mut hi = 1.0;
    while t_cdf(hi, df) < p {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Stats(format!("t quantile for p={p} overflowed")));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Values of one metric across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSeries {
    pub metric: String,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SeedSeries {
    pub fn new(metric: impl Into<String>, values: Vec<f64>, seeds: Vec<u64>) -> Result<Self> {
        if values.len() != seeds.len() {
            return Err(Error::Stats("one value per seed required".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::Stats("seeds must be distinct".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stats("seed values must be finite".into()));
        }
        Ok(Self {
            metric: metric.into(),
            values,
            seeds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mean: f64,
    pub std: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

impl SummaryRow {
    /// `mean±std [lo, hi]` with three decimals.
    pub fn display(&self) -> String {
        format!(
            "{:.3}±{:.3} [{:.3}, {:.3}]",
            self.mean, self.std, self.ci_lo, self.ci_hi
        )
    }
}

/// Two-sided 95% interval from a mean, sample std and sample size.
pub fn ci_from_moments(mean: f64, std: f64, n: usize) -> Result<SummaryRow> {
    if n < 2 {
        return Err(Error::Stats(format!("need at least 2 values for a CI, got {n}")));
    }
    let t = t_quantile(0.975, (n - 1) as u32)?;
    let half = t * std / (n as f64).sqrt();
    Ok(SummaryRow {
        mean,
        std,
        ci_lo: mean - half,
        ci_hi: mean + half,
        n,
    })
}

/// Mean, sample standard deviation (n - 1) and 95% t interval.
///
/// Values are sorted before summation, so the result does not depend on
/// seed order, bit for bit.
pub fn summarize(series: &SeedSeries) -> Result<SummaryRow> {
    let n = series.values.len();
    if n < 2 {
        return Err(Error::Stats(format!(
            "metric '{}' has {n} value(s); at least 2 needed",
            series.metric
        )));
    }
    let mut v = series.values.clone();
    v.sort_by(f64::total_cmp);
    // A constant series reports its value exactly rather than sum / n.
    let mean = if v[0] == v[n - 1] { v[0] } else { v.iter().sum::<f64>() / n as f64 };
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    let mut row = ci_from_moments(mean, std, n)?;
    if std == 0.0 {
        row.ci_lo = mean;
        row.ci_hi = mean;
    }
    Ok(row)
}

/// Per-seed metric maps (metric key → value) summarized key by key.
///
/// Every seed must report the same keys. Output is ordered by key.
pub fn aggregate_maps(per_seed: &[(u64, BTreeMap<String, f64>)]) -> Result<Vec<(String, SummaryRow)>> {
    let Some((_, first)) = per_seed.first() else {
        return Err(Error::Stats("no runs to aggregate".into()));
    };
    for (seed, m) in per_seed {
        if m.len() != first.len() || !m.keys().zip(first.keys()).all(|(a, b)| a == b) {
            return Err(Error::Stats(format!(
                "run for seed {seed} does not have the same cells as the first run"
            )));
        }
    }
    let seeds: Vec<u64> = per_seed.iter().map(|(s, _)| *s).collect();
    first
        .keys()
        .map(|key| {
            let values = per_seed.iter().map(|(_, m)| m[key]).collect();
            let series = SeedSeries::new(key.clone(), values, seeds.clone())?;
            Ok((key.clone(), summarize(&series)?))
        })
        .collect()
}

/// Cell-wise summary of per-seed robustness tables, keyed like
/// [`RobustnessTable::metric_map`].
pub fn aggregate_tables(per_seed: &[(u64, &RobustnessTable)]) -> Result<Vec<(String, SummaryRow)>> {
    if let Some((_, first)) = per_seed.first() {
        if per_seed.iter().any(|(_, t)| t.mode != first.mode) {
            return Err(Error::Stats("cannot aggregate fixed and retuned tables together".into()));
        }
    }
    let maps: Vec<(u64, BTreeMap<String, f64>)> = per_seed.iter().map(|(s, t)| (*s, t.metric_map())).collect();
    aggregate_maps(&maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn median_is_zero() {
        for df in [1, 2, 5, 30] {
            assert_eq!(t_quantile(0.5, df).unwrap(), 0.0);
        }
    }

    #[test]
    fn df2_closed_form() {
        // For df = 2 the quantile is (2p - 1) / sqrt(2 p (1 - p)).
        for p in [0.6f64, 0.9, 0.975, 0.999] {
            let exact = (2.0 * p - 1.0) / (2.0 * p * (1.0 - p)).sqrt();
            assert_abs_diff_eq!(t_quantile(p, 2).unwrap(), exact, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(t_quantile(0.975, 2).unwrap(), 4.302653, epsilon = 1e-6);
    }

    #[test]
    fn df1_is_cauchy() {
        for p in [0.7, 0.95, 0.975] {
            let exact = (std::f64::consts::PI * (p - 0.5)).tan();
            assert_abs_diff_eq!(t_quantile(p, 1).unwrap(), exact, epsilon = 1e-8);
        }
    }

    #[test]
    fn large_df_approaches_normal() {
        let t = t_quantile(0.975, 1000).unwrap();
        assert_abs_diff_eq!(t, 1.9623, epsilon = 1e-4);
        assert!(t > 1.959964);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(t_quantile(0.0, 3).is_err());
        assert!(t_quantile(1.0, 3).is_err());
        assert!(t_quantile(0.5, 0).is_err());
    }

    #[test]
    fn summarize_one_two_three() {
        let s = SeedSeries::new("x", vec![1.0, 2.0, 3.0], vec![0, 1, 2]).unwrap();
        let r = summarize(&s).unwrap();
        assert_abs_diff_eq!(r.mean, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.std, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.ci_lo, -0.48414, epsilon = 1e-5);
        assert_abs_diff_eq!(r.ci_hi, 4.48414, epsilon = 1e-5);
        assert_eq!(r.n, 3);
    }

    #[test]
    fn summarize_constant_series() {
        let s = SeedSeries::new("x", vec![0.7; 3], vec![1, 2, 3]).unwrap();
        let r = summarize(&s).unwrap();
        assert_eq!((r.std, r.ci_lo, r.ci_hi), (0.0, 0.7, 0.7));
    }

    #[test]
    fn summarize_needs_two_values() {
        let s = SeedSeries::new("x", vec![1.0], vec![0]).unwrap();
        assert!(matches!(summarize(&s), Err(Error::Stats(_))));
        assert!(SeedSeries::new("x", vec![1.0, 2.0], vec![4, 4]).is_err());
    }

    #[test]
    fn display_format() {
        let r = ci_from_moments(0.905, 0.020, 3).unwrap();
        assert_eq!(r.display(), "0.905±0.020 [0.855, 0.955]");
    }

    #[test]
    fn aggregate_rejects_shape_mismatch() {
        let a: BTreeMap<String, f64> = [("a".to_string(), 1.0)].into();
        let b: BTreeMap<String, f64> = [("b".to_string(), 1.0)].into();
        assert!(aggregate_maps(&[(0, a.clone()), (1, b)]).is_err());
        assert!(aggregate_maps(&[]).is_err());
        let out = aggregate_maps(&[(0, a.clone()), (1, a)]).unwrap();
        assert_eq!(out[0].1.std, 0.0);
    }
}
