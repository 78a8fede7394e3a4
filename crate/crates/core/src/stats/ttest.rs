use serde::{Deserialize, Serialize};

use super::special::t_quantile;
use super::{compensated_sum, exact_mean, sample_std};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FailToReject,
    Reject,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::FailToReject => "fail_to_reject",
            Verdict::Reject => "reject",
        })
    }
}

/// How paired differences are averaged into the reported effect.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageKind {
    #[default]
    Arithmetic,
    Geometric,
    /// Caller-supplied nonnegative weights, one per difference.
    Weighted(Vec<f64>),
}

impl AverageKind {
    pub fn name(&self) -> &'static str {
        match self {
            AverageKind::Arithmetic => "arithmetic",
            AverageKind::Geometric => "geometric",
            AverageKind::Weighted(_) => "weighted",
        }
    }
}

pub fn average(xs: &[f64], kind: &AverageKind) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("average of an empty sample".into()));
    }
    match kind {
        AverageKind::Arithmetic => Ok(exact_mean(xs)),
        AverageKind::Geometric => {
            if let Some(bad) = xs.iter().find(|&&x| !(x > 0.0)) {
                return Err(Error::Domain(format!(
                    "geometric average needs all differences positive, found {bad}"
                )));
            }
            let logs: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
            Ok(exact_mean(&logs).exp())
        }
        AverageKind::Weighted(w) => {
            if w.len() != xs.len() {
                return Err(Error::Domain(format!(
                    "{} weights supplied for {} differences",
                    w.len(),
                    xs.len()
                )));
            }
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::Domain("weights must be finite and nonnegative".into()));
            }
            let total = compensated_sum(w.iter().copied());
            if !(total > 0.0) {
                return Err(Error::Domain("weights are all zero".into()));
            }
            Ok(compensated_sum(xs.iter().zip(w).map(|(x, w)| x * w)) / total)
        }
    }
}

/// Result of a t-based effect inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    /// Reported effect, averaged per `average_kind`.
    pub delta_e: f64,
    /// Arithmetic mean the test and interval are built on.
    pub mean: f64,
    pub n: usize,
    /// Sample standard deviation; absent for two-sample estimates.
    pub s: Option<f64>,
    pub std_error: f64,
    pub df: f64,
    pub alpha: f64,
    pub mu0: f64,
    pub t_value: f64,
    pub t_critical: f64,
    pub ci: (f64, f64),
    pub verdict: Verdict,
    pub average_kind: AverageKind,
}

impl EffectEstimate {
    /// Build from a mean and its standard error. A zero standard error
    /// yields the degenerate interval (mean, mean) and an exact-equality verdict.
    pub(crate) fn from_parts(mean: f64, std_error: f64, df: f64, n: usize, alpha: f64, mu0: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let t_critical = t_quantile(alpha / 2.0, df)?;
        let (t_value, ci, verdict) = if std_error > 0.0 {
            let t = (mean - mu0) / std_error;
            let half = t_critical * std_error;
            let verdict = if t.abs() >= t_critical {
                Verdict::Reject
            } else {
                Verdict::FailToReject
            };
            (t, (mean - half, mean + half), verdict)
        } else if mean == mu0 {
            (0.0, (mean, mean), Verdict::FailToReject)
        } else {
            let t = if mean > mu0 { f64::INFINITY } else { f64::NEG_INFINITY };
            (t, (mean, mean), Verdict::Reject)
        };
        Ok(EffectEstimate {
            delta_e: mean,
            mean,
            n,
            s: None,
            std_error,
            df,
            alpha,
            mu0,
            t_value,
            t_critical,
            ci,
            verdict,
            average_kind: AverageKind::Arithmetic,
        })
    }

    /// Whether `mu` lies inside the interval, consistent with the verdict
    /// for `mu` as the null value.
    pub fn contains(&self, mu: f64) -> bool {
        let (lo, hi) = self.ci;
        if lo == hi {
            mu == lo
        } else {
            mu > lo && mu < hi
        }
    }

    /// Closed-interval membership, used for coverage counting.
    pub fn covers(&self, mu: f64) -> bool {
        self.ci.0 <= mu && mu <= self.ci.1
    }

    pub fn width(&self) -> f64 {
        self.ci.1 - self.ci.0
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    Ok(())
}

/// Two-sided one-sample t-test of H0: mean = `mu0`.
pub fn one_sample_ttest(xs: &[f64], mu0: f64, alpha: f64) -> Result<EffectEstimate> {
    if xs.len() < 2 {
        return Err(Error::Domain(format!("t-test needs at least 2 values, got {}", xs.len())));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("t-test sample contains non-finite values".into()));
    }
    let n = xs.len();
    let mean = exact_mean(xs);
    let s = sample_std(xs)?;
    let se = s / (n as f64).sqrt();
    let mut est = EffectEstimate::from_parts(mean, se, (n - 1) as f64, n, alpha, mu0)?;
    est.s = Some(s);
    Ok(est)
}

pub fn confidence_interval(xs: &[f64], alpha: f64) -> Result<(f64, f64)> {
    Ok(one_sample_ttest(xs, 0.0, alpha)?.ci)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zero_diffs_fail_to_reject() {
        let e = one_sample_ttest(&[0.0; 5], 0.0, 0.05).unwrap();
        assert_eq!(e.delta_e, 0.0);
        assert_eq!(e.verdict, Verdict::FailToReject);
        assert_eq!(e.ci, (0.0, 0.0));
    }

    #[test]
    fn constant_nonzero_diffs_reject() {
        let e = one_sample_ttest(&[1.0; 4], 0.0, 0.05).unwrap();
        assert_eq!(e.s, Some(0.0));
        assert_eq!(e.verdict, Verdict::Reject);
        assert_eq!(e.ci, (1.0, 1.0));
        assert_eq!(confidence_interval(&[2.5; 3], 0.01).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn too_few_values() {
        assert!(one_sample_ttest(&[1.0], 0.0, 0.05).is_err());
        assert!(one_sample_ttest(&[1.0, 2.0], 0.0, 1.5).is_err());
    }

    #[test]
    fn interval_is_symmetric() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let e = one_sample_ttest(&xs, 0.0, 0.05).unwrap();
        assert!(((e.ci.0 + e.ci.1) / 2.0 - 3.0).abs() < 1e-15);
        let half = 2.776_445_105_197_798_7 * (2.5f64).sqrt() / 5f64.sqrt();
        assert!((e.ci.1 - 3.0 - half).abs() < 1e-8);
    }

    #[test]
    fn accepts_nearby_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(3.92, 1.0).unwrap();
        let xs: Vec<f64> = (0..640).map(|_| normal.sample(&mut rng)).collect();
        let e = one_sample_ttest(&xs, 3.96, 0.01).unwrap();
        assert_eq!(e.verdict, Verdict::FailToReject);
    }

    #[test]
    fn averages() {
        let xs = [1.0, 2.0, 4.0];
        assert_eq!(average(&xs, &AverageKind::Arithmetic).unwrap(), 7.0 / 3.0);
        assert!((average(&xs, &AverageKind::Geometric).unwrap() - 2.0).abs() < 1e-15);
        let w = AverageKind::Weighted(vec![1.0, 0.0, 3.0]);
        assert_eq!(average(&xs, &w).unwrap(), 13.0 / 4.0);
        assert!(average(&[1.0, -1.0], &AverageKind::Geometric).is_err());
        assert!(average(&[1.0, 0.0], &AverageKind::Geometric).is_err());
        assert!(average(&xs, &AverageKind::Weighted(vec![0.0; 3])).is_err());
        assert!(average(&xs, &AverageKind::Weighted(vec![1.0; 2])).is_err());
    }

    #[test]
    fn duality_over_random_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for i in 0..1000 {
            let n = 2 + i % 30;
            let xs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let mu0 = normal.sample(&mut rng) * 0.5;
            let e = one_sample_ttest(&xs, mu0, 0.05).unwrap();
            assert_eq!(e.contains(mu0), e.verdict == Verdict::FailToReject);
        }
    }

    proptest! {
        #[test]
        fn duality(xs in prop::collection::vec(-1e3f64..1e3, 2..40), mu0 in -1e3f64..1e3, alpha in 0.001f64..0.5) {
            let e = one_sample_ttest(&xs, mu0, alpha).unwrap();
            prop_assert_eq!(e.contains(mu0), e.verdict == Verdict::FailToReject);
            prop_assert_eq!(e.verdict == Verdict::Reject, e.t_value.abs() >= e.t_critical);
        }

        #[test]
        fn scale_equivariance(xs in prop::collection::vec(-100f64..100.0, 3..30), lambda in 0.01f64..100.0) {
            let e = one_sample_ttest(&xs, 0.0, 0.05).unwrap();
            prop_assume!(e.s.unwrap() > 1e-6);
            let scaled: Vec<f64> = xs.iter().map(|x| x * lambda).collect();
            let f = one_sample_ttest(&scaled, 0.0, 0.05).unwrap();
            let tol = |a: f64| 1e-9 * a.abs().max(1e-9);
            prop_assert!((f.delta_e - lambda * e.delta_e).abs() <= tol(lambda * e.delta_e) + 1e-9 * lambda);
            prop_assert!((f.s.unwrap() - lambda * e.s.unwrap()).abs() <= tol(lambda * e.s.unwrap()));
            prop_assert!((f.ci.0 - lambda * e.ci.0).abs() <= tol(lambda * e.ci.0) + 1e-9 * lambda);
            prop_assert!((f.ci.1 - lambda * e.ci.1).abs() <= tol(lambda * e.ci.1) + 1e-9 * lambda);
            prop_assert!((f.t_value - e.t_value).abs() <= 1e-8 * e.t_value.abs().max(1.0));
            if (e.t_value.abs() - e.t_critical).abs() > 1e-6 {
                prop_assert_eq!(f.verdict, e.verdict);
            }
        }
    }
}
