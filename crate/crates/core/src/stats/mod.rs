//! Inference: paired effect estimation, one-sample t-tests and confidence
//! intervals, the RCT treatment effect, factorial contrasts and n-way ANOVA.

mod anova;
mod effect;
pub mod special;
mod ttest;

pub use anova::{anova, anova_balanced, rows_by_label, AnovaRow, AnovaTable, ErrorRow, MAX_ANOVA_FACTORS};
pub use effect::{ate, factorial_effect, paired_diffs, paired_effect, DiffSample, EffectOptions};
pub use special::{f_quantile, t_quantile};
pub use ttest::{average, confidence_interval, one_sample_ttest, AverageKind, EffectEstimate, Verdict};

use crate::error::{Error, Result};

/// Neumaier's compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean that returns the common value exactly for constant samples.
pub(crate) fn exact_mean(xs: &[f64]) -> f64 {
    if xs.iter().all(|&x| x == xs[0]) {
        return xs[0];
    }
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

pub fn sample_mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("mean of an empty sample".into()));
    }
    Ok(exact_mean(xs))
}

/// Sample standard deviation with the n - 1 denominator.
pub fn sample_std(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::Domain(format!(
            "standard deviation needs at least 2 values, got {}",
            xs.len()
        )));
    }
    let mean = exact_mean(xs);
    let ss = compensated_sum(xs.iter().map(|&x| (x - mean) * (x - mean)));
    Ok((ss / (xs.len() - 1) as f64).sqrt())
}

pub fn t_statistic(mean: f64, mu0: f64, s: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Domain(format!("t statistic needs n >= 2, got {n}")));
    }
    if !(s > 0.0) {
        return Err(Error::Degenerate(format!(
            "sample standard deviation is {s}; decide by exact equality of mean and mu0"
        )));
    }
    Ok((mean - mu0) / (s / (n as f64).sqrt()))
}
