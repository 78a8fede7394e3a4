//! Meta-evaluation on synthetic models: ground truth, accuracy (interval
//! coverage of the true effect) against cost for each methodology, best-CUI
//! selection and the fixed-configuration pitfall.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    factorial_2kr, factorial_2kr_per_stratum, paired_plan, rct_plan, simple_random_sample, stratified_sample,
    DesignPlan, FactorSplit,
};
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::runner::{aggregate, simulate, Aggregation, RunLog, SyntheticModel};
use crate::space::{ConfigSpace, Configuration, RoleSet};
use crate::stats::{ate, compensated_sum, factorial_effect, paired_effect, EffectEstimate, EffectOptions};

pub const DEFAULT_ITERATIONS: u64 = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Lower is better, e.g. execution time.
    #[default]
    Minimize,
    Maximize,
}

impl Direction {
    fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Minimize => candidate < incumbent,
            Direction::Maximize => candidate > incumbent,
        }
    }
}

/// One methodology row of a meta-evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Paired {
        n: usize,
        r: u32,
        /// Stratum factor for stratified DC sampling.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stratum: Option<String>,
    },
    Rct {
        n: usize,
        r: u32,
    },
    #[serde(rename = "factorial_2kr")]
    Factorial2kr {
        split: BTreeMap<String, FactorSplit>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        pinned: BTreeMap<String, String>,
        r: u32,
        /// Repeat the design for every level of this factor.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        per_stratum: Option<String>,
    },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Paired { .. } => "paired",
            MethodSpec::Rct { .. } => "rct",
            MethodSpec::Factorial2kr { .. } => "factorial_2kr",
        }
    }

    fn r(&self) -> u32 {
        match self {
            MethodSpec::Paired { r, .. } | MethodSpec::Rct { r, .. } | MethodSpec::Factorial2kr { r, .. } => *r,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub space: ConfigSpace,
    pub model: SyntheticModel,
    pub cui_a: String,
    pub cui_ref: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
}

fn default_alpha() -> f64 {
    0.01
}

fn default_iterations() -> u64 {
    DEFAULT_ITERATIONS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    /// Sample size: DC configurations for paired and RCT rows, cells for factorial rows.
    pub n: usize,
    pub r: u32,
    pub cost: usize,
    pub iterations: u64,
    pub covered: u64,
    pub accuracy: f64,
    pub mean_ci_width: f64,
    pub ground_truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub level: String,
    /// Average response per CUI level, in declared level order.
    pub averages: Vec<(String, f64)>,
    /// Another level matched the winner exactly; the earliest was chosen.
    pub tie: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitfallReport {
    pub fixed_dc: Configuration,
    pub fixed_estimate: f64,
    pub ground_truth: f64,
    pub sign_flip: bool,
}

/// Spread of one quantity across configurations, expressed both relative
/// to the minimum and relative to the mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariabilityReport {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub range_over_min_pct: f64,
    pub range_over_mean_pct: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "scenario document".into(),
            source,
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("{} is outside (0, 1)", self.alpha)));
        }
        self.model.validate(&self.space)?;
        let cui = self.space.cui_factor();
        for (path, label) in [("cui_a", &self.cui_a), ("cui_ref", &self.cui_ref)] {
            if cui.level_index(label).is_none() {
                return Err(Error::invalid(path, format!("'{label}' is not a level of '{}'", cui.name)));
            }
        }
        for (i, m) in self.methods.iter().enumerate() {
            if m.r() == 0 {
                return Err(Error::invalid(format!("methods[{i}].r"), "must be at least 1"));
            }
        }
        Ok(())
    }

    /// True effect of `cui_a` over `cui_ref` under the DC weight distribution.
    pub fn ground_truth(&self) -> Result<f64> {
        self.model.closed_form_delta(&self.space, &self.cui_a, &self.cui_ref)
    }

    /// Zero-noise paired effect over the full DC enumeration.
    pub fn enumeration_effect(&self, budget: u64) -> Result<f64> {
        let dc: Vec<Configuration> = self.space.enumerate(RoleSet::DC, budget)?.collect();
        let plan = paired_plan(&self.space, &self.cui_a, &self.cui_ref, &dc, 1, self.master_seed)?;
        let exact = self.model.clone().with_noise(0.0);
        let log = simulate(&plan, &exact);
        Ok(paired_effect(&log, &plan, &self.effect_options(0.0))?.delta_e)
    }

    fn effect_options(&self, mu0: f64) -> EffectOptions {
        EffectOptions {
            alpha: self.alpha,
            mu0,
            aggregation: self.aggregation,
            ..EffectOptions::default()
        }
    }

    /// Seed of iteration `j`, shared by every method row.
    pub fn iteration_seed(&self, j: u64) -> u64 {
        derive_seed(&[&self.master_seed.to_le_bytes(), b"iteration", &j.to_le_bytes()])
    }

    /// Plan for one method at one iteration seed.
    pub fn plan(&self, method: &MethodSpec, seed: u64) -> Result<DesignPlan> {
        let space = &self.space;
        match method {
            MethodSpec::Paired { n, r, stratum } => {
                let dc = match stratum {
                    Some(s) => stratified_sample(space, s, *n, seed)?,
                    None => simple_random_sample(space, RoleSet::DC, *n, seed)?,
                };
                paired_plan(space, &self.cui_a, &self.cui_ref, &dc, *r, seed)
            }
            MethodSpec::Rct { n, r } => rct_plan(space, &self.cui_ref, &self.cui_a, *n, *r, seed),
            MethodSpec::Factorial2kr {
                split,
                pinned,
                r,
                per_stratum,
            } => match per_stratum {
                Some(s) => factorial_2kr_per_stratum(space, s, split, *r, seed),
                None => factorial_2kr(space, split, pinned, *r, seed),
            },
        }
    }

    /// Effect estimate for one method at one iteration seed.
    pub fn estimate(&self, method: &MethodSpec, seed: u64, mu0: f64) -> Result<(DesignPlan, EffectEstimate)> {
        let plan = self.plan(method, seed)?;
        let log = simulate(&plan, &self.model);
        let options = self.effect_options(mu0);
        let est = match method {
            MethodSpec::Paired { .. } => paired_effect(&log, &plan, &options)?,
            MethodSpec::Rct { .. } => ate(&log, &plan, &options)?,
            MethodSpec::Factorial2kr { .. } => {
                factorial_effect(&log, &plan, &self.space, &self.cui_a, &self.cui_ref, &options)?
            }
        };
        Ok((plan, est))
    }

    /// Coverage frequency of the true effect and cost for every method row.
    pub fn accuracy_cost(&self) -> Result<Vec<AccuracyRow>> {
        self.validate()?;
        let truth = self.ground_truth()?;
        let mut rows = Vec::with_capacity(self.methods.len());
        for method in &self.methods {
            // Surface infeasible sizes before spending any iterations.
            let first = self.plan(method, self.iteration_seed(0))?;
            let outcomes = (0..self.iterations)
                .into_par_iter()
                .map(|j| {
                    let (_, est) = self.estimate(method, self.iteration_seed(j), truth)?;
                    Ok((est.covers(truth), est.width()))
                })
                .collect::<Result<Vec<(bool, f64)>>>()?;
            let covered = outcomes.iter().filter(|o| o.0).count() as u64;
            let width = compensated_sum(outcomes.iter().map(|o| o.1)) / self.iterations as f64;
            rows.push(AccuracyRow {
                method: method.name().to_string(),
                n: first.metadata.sample_size,
                r: method.r(),
                cost: first.cost(),
                iterations: self.iterations,
                covered,
                accuracy: covered as f64 / self.iterations as f64,
                mean_ci_width: width,
                ground_truth: truth,
            });
        }
        Ok(rows)
    }

    /// Single-configuration estimate at `fixed_dc` against the true effect.
    pub fn pitfall_demo(&self, fixed_dc: &Configuration) -> Result<PitfallReport> {
        let (a, r) = self.space.pair_with(fixed_dc, &self.cui_a, &self.cui_ref)?;
        let fixed_estimate = self.model.expected(&a) - self.model.expected(&r);
        let ground_truth = self.ground_truth()?;
        Ok(PitfallReport {
            fixed_dc: fixed_dc.clone(),
            fixed_estimate,
            ground_truth,
            sign_flip: fixed_estimate * ground_truth < 0.0,
        })
    }

    pub fn select_best_cui(&self, dc_sample: &[Configuration]) -> Result<Selection> {
        select_best_cui_model(&self.space, &self.model, dc_sample, self.direction)
    }
}

/// The CUI level with the best average response over `dc_sample`.
/// `value` returns the response of a complete configuration.
pub fn select_best_cui<F>(space: &ConfigSpace, dc_sample: &[Configuration], direction: Direction, value: F) -> Result<Selection>
where
    F: Fn(&Configuration) -> Result<f64>,
{
    if dc_sample.is_empty() {
        return Err(Error::Domain("best-CUI selection needs a nonempty DC sample".into()));
    }
    let cui = space.cui_factor();
    let mut averages = Vec::with_capacity(cui.levels.len());
    for level in &cui.levels {
        let values = dc_sample
            .iter()
            .map(|dc| {
                let mut assignment = dc.assignment().clone();
                assignment.insert(cui.name.clone(), level.label.clone());
                value(&Configuration::from_assignment(assignment))
            })
            .collect::<Result<Vec<f64>>>()?;
        averages.push((level.label.clone(), crate::stats::sample_mean(&values)?));
    }
    let mut best = 0;
    for (i, (_, v)) in averages.iter().enumerate().skip(1) {
        if direction.better(*v, averages[best].1) {
            best = i;
        }
    }
    let tie = averages
        .iter()
        .enumerate()
        .any(|(i, (_, v))| i != best && *v == averages[best].1);
    Ok(Selection {
        level: averages[best].0.clone(),
        averages,
        tie,
    })
}

pub fn select_best_cui_model(
    space: &ConfigSpace,
    model: &SyntheticModel,
    dc_sample: &[Configuration],
    direction: Direction,
) -> Result<Selection> {
    select_best_cui(space, dc_sample, direction, |c| Ok(model.expected(c)))
}

/// Selection from measured data: every CUI level must have been measured
/// on every configuration of `dc_sample`.
pub fn select_best_cui_log(
    space: &ConfigSpace,
    log: &RunLog,
    aggregation: Aggregation,
    dc_sample: &[Configuration],
    direction: Direction,
) -> Result<Selection> {
    let mut values: HashMap<_, Vec<f64>> = HashMap::new();
    for m in log.records() {
        if let Some(v) = m.ok_value() {
            values.entry(m.config_id).or_default().push(v);
        }
    }
    select_best_cui(space, dc_sample, direction, |c| match values.get(&c.id()) {
        Some(vs) => aggregate(vs, aggregation),
        None => Err(Error::Incomplete {
            ids: vec![format!("{} ({c})", c.id())],
        }),
    })
}

pub fn variability(values: &[f64]) -> Result<VariabilityReport> {
    if values.is_empty() {
        return Err(Error::Domain("variability of an empty sample".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = crate::stats::sample_mean(values)?;
    let range = max - min;
    Ok(VariabilityReport {
        n: values.len(),
        min,
        max,
        mean,
        range_over_min_pct: range / min * 100.0,
        range_over_mean_pct: range / mean * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Factor, Role};

    fn space() -> ConfigSpace {
        let workloads: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        ConfigSpace::new(
            vec![
                Factor::with_labels("ht", Role::Cui, &["on", "off"]),
                Factor::with_labels("w", Role::Dc, &workloads),
                Factor::with_labels("t", Role::Dc, &["1", "2", "4"]),
            ],
            vec![],
        )
        .unwrap()
    }

    fn scenario(model: SyntheticModel, methods: Vec<MethodSpec>) -> Scenario {
        Scenario {
            space: space(),
            model,
            cui_a: "off".into(),
            cui_ref: "on".into(),
            alpha: 0.01,
            iterations: 50,
            master_seed: 7,
            direction: Direction::Minimize,
            aggregation: Aggregation::Median,
            methods,
        }
    }

    #[test]
    fn ground_truth_examples() {
        let base = SyntheticModel::new(10.0).with_main("w", "w3", 4.0);
        assert_eq!(scenario(base.clone(), vec![]).ground_truth().unwrap(), 0.0);
        let main = base.clone().with_main("ht", "off", 2.0);
        assert_eq!(scenario(main.clone(), vec![]).ground_truth().unwrap(), 2.0);
        let inter = main.with_interaction(&[("ht", "off"), ("w", "w5")], 5.0);
        let s = scenario(inter, vec![]);
        assert!((s.ground_truth().unwrap() - 2.5).abs() < 1e-12);
        assert!((s.enumeration_effect(1_000).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_paired_is_always_covered() {
        let model = SyntheticModel::new(10.0)
            .with_main("ht", "off", 2.0)
            .with_interaction(&[("ht", "off"), ("w", "w1")], 3.0);
        let s = scenario(
            model,
            vec![MethodSpec::Paired {
                n: 30,
                r: 1,
                stratum: None,
            }],
        );
        let rows = s.accuracy_cost().unwrap();
        // Differences vary across workloads, so intervals are not degenerate;
        // they still must cover the truth most of the time.
        assert_eq!(rows[0].cost, 30);
        assert!(rows[0].accuracy > 0.9);
        let flat = scenario(
            SyntheticModel::new(10.0).with_main("ht", "off", 2.0).with_main("w", "w2", 9.0),
            vec![MethodSpec::Paired {
                n: 5,
                r: 1,
                stratum: None,
            }],
        );
        assert_eq!(flat.accuracy_cost().unwrap()[0].accuracy, 1.0);
    }

    #[test]
    fn accuracy_is_deterministic_and_exact_ratio() {
        let model = SyntheticModel::new(10.0)
            .with_main("ht", "off", 2.0)
            .with_main("w", "w4", 30.0)
            .with_noise(1.0);
        let s = scenario(
            model,
            vec![
                MethodSpec::Paired {
                    n: 10,
                    r: 2,
                    stratum: None,
                },
                MethodSpec::Rct { n: 10, r: 2 },
            ],
        );
        let a = s.accuracy_cost().unwrap();
        let b = s.accuracy_cost().unwrap();
        assert_eq!(a, b);
        for row in &a {
            assert_eq!(row.accuracy, row.covered as f64 / row.iterations as f64);
        }
    }

    #[test]
    fn infeasible_size_is_an_error() {
        let s = scenario(
            SyntheticModel::new(1.0),
            vec![MethodSpec::Paired {
                n: 31,
                r: 1,
                stratum: None,
            }],
        );
        assert!(matches!(s.accuracy_cost(), Err(Error::Infeasible { .. })));
        let mut zero = s.clone();
        zero.iterations = 0;
        assert!(zero.accuracy_cost().is_err());
    }

    #[test]
    fn best_cui_selection() {
        let sp = space();
        let dc: Vec<Configuration> = sp.enumerate(RoleSet::DC, 100).unwrap().collect();
        let model = SyntheticModel::new(5.0).with_main("ht", "off", -2.0);
        let sel = select_best_cui_model(&sp, &model, &dc, Direction::Minimize).unwrap();
        assert_eq!(sel.level, "off");
        assert!(!sel.tie);
        let max = select_best_cui_model(&sp, &model, &dc, Direction::Maximize).unwrap();
        assert_eq!(max.level, "on");
        let flat = select_best_cui_model(&sp, &SyntheticModel::new(5.0), &dc, Direction::Minimize).unwrap();
        assert_eq!(flat.level, "on");
        assert!(flat.tie);
    }

    #[test]
    fn best_cui_from_log_requires_coverage() {
        let sp = space();
        let dc: Vec<Configuration> = sp.enumerate(RoleSet::DC, 100).unwrap().take(4).collect();
        let model = SyntheticModel::new(5.0).with_main("ht", "on", 1.0).with_noise(0.1);
        let plan = paired_plan(&sp, "on", "off", &dc, 3, 0).unwrap();
        let log = simulate(&plan, &model);
        let sel = select_best_cui_log(&sp, &log, Aggregation::Median, &dc, Direction::Minimize).unwrap();
        assert_eq!(sel.level, "off");
        let more: Vec<Configuration> = sp.enumerate(RoleSet::DC, 100).unwrap().take(5).collect();
        assert!(matches!(
            select_best_cui_log(&sp, &log, Aggregation::Median, &more, Direction::Minimize),
            Err(Error::Incomplete { .. })
        ));
    }

    #[test]
    fn pitfall_flags_sign_flip() {
        let model = SyntheticModel::new(100.0)
            .with_main("ht", "off", 4.0)
            .with_interaction(&[("ht", "off"), ("w", "w0"), ("t", "4")], -40.0);
        let s = scenario(model, vec![]);
        let fixed = Configuration::from_pairs([("w", "w0"), ("t", "4")]);
        let report = s.pitfall_demo(&fixed).unwrap();
        assert_eq!(report.fixed_estimate, -36.0);
        assert!(report.ground_truth > 0.0);
        assert!(report.sign_flip);
        let other = s.pitfall_demo(&Configuration::from_pairs([("w", "w1"), ("t", "4")])).unwrap();
        assert!(!other.sign_flip);
    }

    #[test]
    fn variability_report() {
        let v = variability(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(v.range_over_min_pct, 200.0);
        assert_eq!(v.range_over_mean_pct, 100.0);
        assert!(variability(&[]).is_err());
    }

    #[test]
    fn scenario_round_trip() {
        let s = scenario(
            SyntheticModel::new(1.0).with_main("ht", "off", 0.5),
            vec![
                MethodSpec::Paired {
                    n: 4,
                    r: 1,
                    stratum: None,
                },
                MethodSpec::Factorial2kr {
                    split: BTreeMap::from([("ht".to_string(), FactorSplit::new(["on"], ["off"]))]),
                    pinned: BTreeMap::from([("w".to_string(), "w0".to_string()), ("t".to_string(), "1".to_string())]),
                    r: 2,
                    per_stratum: None,
                },
            ],
        );
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let bad = s.to_json().replace("\"iterations\": 50", "\"iterations\": 0");
        assert!(Scenario::from_json(&bad).is_err());
    }
}
