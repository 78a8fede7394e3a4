use serde::{Deserialize, Serialize};

use super::ttest::{average, check_alpha, one_sample_ttest, AverageKind, EffectEstimate};
use super::{compensated_sum, exact_mean};
use crate::design::{Arm, DesignPlan, Group, Method};
use crate::error::{Error, Result};
use crate::runner::{collapse, replicate_values, Aggregation, RunLog};
use crate::space::ConfigSpace;

/// Per-pair differences OE(cui_a | d) - OE(cui_ref | d), in pair order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffSample {
    pub diffs: Vec<f64>,
    pub unit: String,
    pub cui_a: String,
    pub cui_ref: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectOptions {
    pub alpha: f64,
    pub mu0: f64,
    pub aggregation: Aggregation,
    pub average: AverageKind,
}

impl Default for EffectOptions {
    fn default() -> Self {
        EffectOptions {
            alpha: 0.01,
            mu0: 0.0,
            aggregation: Aggregation::Median,
            average: AverageKind::Arithmetic,
        }
    }
}

fn require_method(plan: &DesignPlan, method: Method) -> Result<()> {
    if plan.method != method {
        return Err(Error::Domain(format!("expected a {method} plan, got {}", plan.method)));
    }
    Ok(())
}

pub fn paired_diffs(log: &RunLog, plan: &DesignPlan, aggregation: Aggregation) -> Result<DiffSample> {
    require_method(plan, Method::Paired)?;
    let collapsed = collapse(log, plan, aggregation)?;
    let mut pairs: Vec<[Option<f64>; 2]> = Vec::new();
    for t in &plan.trials {
        let Group::Pair { pair_id, arm } = t.group else {
            return Err(Error::Domain("paired plan contains an unpaired trial".into()));
        };
        let pid = pair_id as usize;
        if pairs.len() <= pid {
            pairs.resize(pid + 1, [None, None]);
        }
        let slot = match arm {
            Arm::A => 0,
            Arm::Ref => 1,
        };
        pairs[pid][slot] = Some(collapsed.values[&t.config.id()]);
    }
    let diffs = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            [Some(a), Some(r)] => Ok(a - r),
            _ => Err(Error::Domain(format!("pair {i} is missing an arm"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiffSample {
        diffs,
        unit: log.header().unit.clone(),
        cui_a: plan.metadata.cui_a.clone().unwrap_or_default(),
        cui_ref: plan.metadata.cui_ref.clone().unwrap_or_default(),
    })
}

/// Average paired difference with t-based inference on the differences.
pub fn paired_effect(log: &RunLog, plan: &DesignPlan, options: &EffectOptions) -> Result<EffectEstimate> {
    let sample = paired_diffs(log, plan, options.aggregation)?;
    let mut est = one_sample_ttest(&sample.diffs, options.mu0, options.alpha)?;
    est.delta_e = average(&sample.diffs, &options.average)?;
    est.average_kind = options.average.clone();
    Ok(est)
}

/// Average treatment effect mean(treatment) - mean(control) with a Welch interval.
pub fn ate(log: &RunLog, plan: &DesignPlan, options: &EffectOptions) -> Result<EffectEstimate> {
    require_method(plan, Method::Rct)?;
    check_alpha(options.alpha)?;
    let collapsed = collapse(log, plan, options.aggregation)?;
    let mut seen = std::collections::HashSet::new();
    let (mut control, mut treatment) = (Vec::new(), Vec::new());
    for t in &plan.trials {
        let id = t.config.id();
        if !seen.insert(id) {
            continue;
        }
        match t.group {
            Group::Control => control.push(collapsed.values[&id]),
            Group::Treatment => treatment.push(collapsed.values[&id]),
            _ => return Err(Error::Domain("RCT plan contains a trial outside both arms".into())),
        }
    }
    for (name, arm) in [("control", &control), ("treatment", &treatment)] {
        if arm.len() < 2 {
            return Err(Error::Domain(format!(
                "{name} arm has {} configurations; at least 2 are required",
                arm.len()
            )));
        }
    }
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = exact_mean(xs);
        let var = compensated_sum(xs.iter().map(|x| (x - m) * (x - m))) / (n - 1.0);
        (m, var / n, n)
    };
    let (mc, vc, nc) = stats(&control);
    let (mt, vt, nt) = stats(&treatment);
    let se = (vc + vt).sqrt();
    let df = if vc + vt > 0.0 {
        let welch = (vc + vt).powi(2) / (vc * vc / (nc - 1.0) + vt * vt / (nt - 1.0));
        welch.max(1.0)
    } else {
        nc + nt - 2.0
    };
    EffectEstimate::from_parts(mt - mc, se, df, control.len() + treatment.len(), options.alpha, options.mu0)
}

/// CUI contrast of a 2^k r design: mean of the cells whose CUI level lies in
/// the block containing `cui_a`, minus the mean of the other block, with a
/// standard error from the pooled within-cell variance.
pub fn factorial_effect(
    log: &RunLog,
    plan: &DesignPlan,
    space: &ConfigSpace,
    cui_a: &str,
    cui_ref: &str,
    options: &EffectOptions,
) -> Result<EffectEstimate> {
    require_method(plan, Method::Factorial2kr)?;
    let cui = &space.cui_factor().name;
    let split = plan
        .metadata
        .split
        .get(cui)
        .ok_or_else(|| Error::Domain(format!("the CUI factor '{cui}' is not varied in this design")))?;
    let block = |label: &str| {
        if split.high.iter().any(|l| l == label) {
            Ok(true)
        } else if split.low.iter().any(|l| l == label) {
            Ok(false)
        } else {
            Err(Error::Domain(format!("level '{label}' is not in the split of '{cui}'")))
        }
    };
    let positive = block(cui_a)?;
    if block(cui_ref)? == positive {
        return Err(Error::Domain(format!(
            "'{cui_a}' and '{cui_ref}' fall in the same block of '{cui}'"
        )));
    }

    let cells = replicate_values(log, plan)?;
    let mut means = [Vec::new(), Vec::new()];
    let mut inv_reps = [Vec::new(), Vec::new()];
    let mut within = Vec::new();
    let mut df = 0usize;
    let mut n = 0usize;
    for (config, values) in &cells {
        let level = config
            .get(cui)
            .ok_or_else(|| Error::Domain("configuration lacks the CUI factor".into()))?;
        let side = usize::from(block(level)? == positive);
        let m = exact_mean(values);
        means[side].push(m);
        inv_reps[side].push(1.0 / values.len() as f64);
        within.extend(values.iter().map(|v| (v - m) * (v - m)));
        df += values.len() - 1;
        n += values.len();
    }
    if means[0].is_empty() || means[1].is_empty() {
        return Err(Error::Domain("one CUI block has no cells".into()));
    }
    if df == 0 {
        return Err(Error::Domain("factorial contrast needs r >= 2 for an error estimate".into()));
    }
    let pooled_var = compensated_sum(within) / df as f64;
    let var_factor: f64 = (0..2)
        .map(|s| compensated_sum(inv_reps[s].iter().copied()) / (means[s].len() as f64).powi(2))
        .sum();
    let contrast = exact_mean(&means[1]) - exact_mean(&means[0]);
    EffectEstimate::from_parts(
        contrast,
        (pooled_var * var_factor).sqrt(),
        df as f64,
        n,
        options.alpha,
        options.mu0,
    )
}
