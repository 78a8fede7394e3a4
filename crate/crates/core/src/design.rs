//! Design plans for the four compared methodologies: full factorial,
//! 2^k r factorial, randomized controlled trial, and paired DC sampling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{derive_seed, sha256_hex};
use crate::space::{ConfigSpace, Configuration, Role, RoleSet, SubSpace};

/// Redraws allowed per 2^k r cell before giving up on an excluded draw.
pub const MAX_CELL_RETRIES: usize = 32;

/// Above this many raw combinations, sampling from a space with exclusions
/// switches from materializing the valid set to rejection sampling.
const MATERIALIZE_LIMIT: u128 = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FullFactorial,
    #[serde(rename = "factorial_2kr")]
    Factorial2kr,
    Rct,
    Paired,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::FullFactorial => "full_factorial",
            Method::Factorial2kr => "factorial_2kr",
            Method::Rct => "rct",
            Method::Paired => "paired",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// The CUI level being attributed.
    A,
    /// The reference CUI level.
    Ref,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Group {
    Single,
    Control,
    Treatment,
    Pair { pair_id: u32, arm: Arm },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: Configuration,
    pub replicate: u32,
    pub group: Group,
    pub seed: u64,
}

/// Two-block partition of one factor's levels for a 2^k r design.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSplit {
    pub low: Vec<String>,
    pub high: Vec<String>,
}

impl FactorSplit {
    pub fn new<S: Into<String>>(low: impl IntoIterator<Item = S>, high: impl IntoIterator<Item = S>) -> Self {
        FactorSplit {
            low: low.into_iter().map(Into::into).collect(),
            high: high.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanMetadata {
    /// Sample size: DC configurations for paired and RCT plans, cells for factorial plans.
    pub sample_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cui_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cui_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub split: BTreeMap<String, FactorSplit>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub pinned: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignPlan {
    pub method: Method,
    pub r: u32,
    pub master_seed: u64,
    pub space_digest: String,
    pub metadata: PlanMetadata,
    pub trials: Vec<Trial>,
}

impl DesignPlan {
    fn new(method: Method, space: &ConfigSpace, r: u32, master_seed: u64, metadata: PlanMetadata) -> Self {
        DesignPlan {
            method,
            r,
            master_seed,
            space_digest: space.digest(),
            metadata,
            trials: Vec::new(),
        }
    }

    fn push_replicates(&mut self, config: &Configuration, group: Group) {
        for replicate in 0..self.r {
            let seed = trial_seed(self.master_seed, config, replicate);
            self.trials.push(Trial {
                config: config.clone(),
                replicate,
                group,
                seed,
            });
        }
    }

    /// Configurations in the plan, counting each arm of a pair separately.
    pub fn config_count(&self) -> usize {
        if self.r == 0 {
            0
        } else {
            self.trials.len() / self.r as usize
        }
    }

    /// The cost metric: sampled DC configurations for paired plans,
    /// configurations otherwise.
    pub fn cost(&self) -> usize {
        match self.method {
            Method::Paired => self.config_count() / 2,
            _ => self.config_count(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "plan document".into(),
            source,
        })
    }

    /// SHA-256 of the compact serialized plan.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("plans always serialize"))
    }
}

/// Per-trial seed: a stable hash of the master seed, configuration id and
/// replicate index, so results do not depend on execution order.
pub fn trial_seed(master_seed: u64, config: &Configuration, replicate: u32) -> u64 {
    derive_seed(&[
        &master_seed.to_le_bytes(),
        config.id().as_bytes(),
        &replicate.to_le_bytes(),
    ])
}

fn check_r(r: u32) -> Result<()> {
    if r == 0 {
        return Err(Error::invalid("r", "replicate count must be at least 1"));
    }
    Ok(())
}

/// One trial per (valid configuration, replicate).
pub fn full_factorial(space: &ConfigSpace, r: u32, budget: u64) -> Result<DesignPlan> {
    check_r(r)?;
    let configs = space.cartesian_size(RoleSet::ALL);
    let needed = configs.saturating_mul(r as u64);
    if needed > budget {
        return Err(Error::Budget { needed, budget });
    }
    let meta = PlanMetadata {
        sample_size: configs as usize,
        ..Default::default()
    };
    let mut plan = DesignPlan::new(Method::FullFactorial, space, r, 0, meta);
    plan.trials.reserve(needed as usize);
    for config in space.enumerate(RoleSet::ALL, u64::MAX)? {
        plan.push_replicates(&config, Group::Single);
    }
    Ok(plan)
}

/// 2^k r factorial design: each factor named in `split` is a two-level
/// factor whose levels are intervals; every cell draws one level uniformly
/// from each interval. Factors absent from `split` must be pinned in
/// `pinned` unless they have a single level.
pub fn factorial_2kr(
    space: &ConfigSpace,
    split: &BTreeMap<String, FactorSplit>,
    pinned: &BTreeMap<String, String>,
    r: u32,
    seed: u64,
) -> Result<DesignPlan> {
    check_r(r)?;
    let cells = TwoLevelCells::new(space, split, pinned)?;
    let meta = PlanMetadata {
        sample_size: cells.count(),
        split: split.clone(),
        pinned: pinned.clone(),
        ..Default::default()
    };
    let mut plan = DesignPlan::new(Method::Factorial2kr, space, r, seed, meta);
    for config in cells.draw(space, seed, 0)? {
        plan.push_replicates(&config, Group::Single);
    }
    Ok(plan)
}

/// 2^k r design repeated for every level of `stratum` (the per-workload
/// variant): `levels(stratum) × 2^k` cells.
pub fn factorial_2kr_per_stratum(
    space: &ConfigSpace,
    stratum: &str,
    split: &BTreeMap<String, FactorSplit>,
    r: u32,
    seed: u64,
) -> Result<DesignPlan> {
    check_r(r)?;
    let si = space.require_factor(stratum)?;
    if split.contains_key(stratum) {
        return Err(Error::invalid(
            format!("split.{stratum}"),
            "the stratum factor cannot also be split",
        ));
    }
    let levels = &space.factors()[si].levels;
    let mut meta = PlanMetadata {
        split: split.clone(),
        stratum: Some(stratum.to_string()),
        ..Default::default()
    };
    let mut configs = Vec::new();
    for (li, level) in levels.iter().enumerate() {
        let pinned = BTreeMap::from([(stratum.to_string(), level.label.clone())]);
        let cells = TwoLevelCells::new(space, split, &pinned)?;
        configs.extend(cells.draw(space, seed, li as u64 + 1)?);
    }
    meta.sample_size = configs.len();
    let mut plan = DesignPlan::new(Method::Factorial2kr, space, r, seed, meta);
    for config in &configs {
        plan.push_replicates(config, Group::Single);
    }
    Ok(plan)
}

/// Resolved per-factor level blocks for a 2^k r design.
struct TwoLevelCells {
    /// For each factor in space order: (low block, high block); pinned and
    /// single-level factors have identical blocks.
    blocks: Vec<(Vec<usize>, Vec<usize>)>,
    /// Factor indices that are varied, in space order.
    varied: Vec<usize>,
}

impl TwoLevelCells {
    fn new(
        space: &ConfigSpace,
        split: &BTreeMap<String, FactorSplit>,
        pinned: &BTreeMap<String, String>,
    ) -> Result<Self> {
        for name in split.keys().chain(pinned.keys()) {
            space.require_factor(name)?;
        }
        let mut blocks = Vec::new();
        let mut varied = Vec::new();
        for (fi, factor) in space.factors().iter().enumerate() {
            let path = format!("split.{}", factor.name);
            match (split.get(&factor.name), pinned.get(&factor.name)) {
                (Some(_), Some(_)) => {
                    return Err(Error::invalid(path, "factor is both split and pinned"));
                }
                (Some(s), None) => {
                    let resolve = |labels: &[String]| -> Result<Vec<usize>> {
                        labels.iter().map(|l| space.require_level(fi, l)).collect()
                    };
                    let low = resolve(&s.low)?;
                    let high = resolve(&s.high)?;
                    let mut all: Vec<usize> = low.iter().chain(&high).copied().collect();
                    all.sort_unstable();
                    let expect: Vec<usize> = (0..factor.levels.len()).collect();
                    if low.is_empty() || high.is_empty() || all != expect {
                        return Err(Error::invalid(
                            path,
                            "split must partition the levels into two nonempty blocks",
                        ));
                    }
                    varied.push(fi);
                    blocks.push((low, high));
                }
                (None, Some(label)) => {
                    let li = space.require_level(fi, label)?;
                    blocks.push((vec![li], vec![li]));
                }
                (None, None) if factor.levels.len() == 1 => blocks.push((vec![0], vec![0])),
                (None, None) => {
                    return Err(Error::invalid(path, "multi-level factor is neither split nor pinned"));
                }
            }
        }
        Ok(TwoLevelCells { blocks, varied })
    }

    fn count(&self) -> usize {
        1 << self.varied.len()
    }

    /// Draw one configuration per cell. Cell `c` sets varied factor `j`
    /// (in space order) high when bit `k-1-j` of `c` is set.
    fn draw(&self, space: &ConfigSpace, seed: u64, stream: u64) -> Result<Vec<Configuration>> {
        let k = self.varied.len();
        let mut out = Vec::with_capacity(self.count());
        for cell in 0..self.count() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                b"2kr",
                &seed.to_le_bytes(),
                &stream.to_le_bytes(),
                &(cell as u64).to_le_bytes(),
            ]));
            let choose = |fi: usize| {
                let high = self
                    .varied
                    .iter()
                    .position(|&v| v == fi)
                    .map(|j| cell >> (k - 1 - j) & 1 == 1)
                    .unwrap_or(false);
                let (low, hi) = &self.blocks[fi];
                if high {
                    hi
                } else {
                    low
                }
            };
            let mut drawn = None;
            for _ in 0..=MAX_CELL_RETRIES {
                let config = space.configuration_from_indices((0..space.factors().len()).map(|fi| {
                    let block = choose(fi);
                    (fi, block[rng.random_range(0..block.len())])
                }));
                if !space.is_excluded(&config) {
                    drawn = Some(config);
                    break;
                }
            }
            out.push(drawn.ok_or_else(|| Error::Infeasible {
                message: format!("2^k r cell {cell} has no valid draw after {MAX_CELL_RETRIES} retries"),
            })?);
        }
        Ok(out)
    }
}

/// `n` distinct valid configurations over `roles`, drawn without replacement.
///
/// With uniform level weights every `n`-subset is equally likely; otherwise
/// draws are weighted by the product of level weights.
pub fn simple_random_sample(space: &ConfigSpace, roles: RoleSet, n: usize, seed: u64) -> Result<Vec<Configuration>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sub = SubSpace::new(space, roles);
    sample_subspace(&sub, n, space.has_uniform_weights(roles), &mut rng)
}

fn sample_subspace(sub: &SubSpace<'_>, n: usize, uniform: bool, rng: &mut ChaCha8Rng) -> Result<Vec<Configuration>> {
    let available = sub.count();
    if n as u64 > available {
        return Err(Error::Infeasible {
            message: format!("sample of {n} requested from a space of {available}"),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let product = sub.product();
    let width = sub.factors.len();
    let decode = |i: u128| {
        let mut levels = vec![0; width];
        sub.decode(i, &mut levels);
        levels
    };

    if !uniform {
        let len = usize::try_from(product)
            .ok()
            .filter(|&l| (l as u128) <= MATERIALIZE_LIMIT)
            .ok_or_else(|| Error::Infeasible {
                message: format!("weighted sampling over {product} combinations is too large"),
            })?;
        let weights: Vec<f64> = (0..len)
            .map(|i| {
                let levels = decode(i as u128);
                if sub.is_excluded(&levels) {
                    0.0
                } else {
                    sub.weight(&levels)
                }
            })
            .collect();
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        if positive < n {
            return Err(Error::Infeasible {
                message: format!("sample of {n} requested but only {positive} configurations have positive weight"),
            });
        }
        let picked = index::sample_weighted(rng, len, |i| weights[i], n).map_err(|e| Error::Infeasible {
            message: format!("weighted sample of {n}: {e}"),
        })?;
        return Ok(picked.iter().map(|i| sub.configuration(&decode(i as u128))).collect());
    }

    if !sub.has_exclusions() {
        if let Ok(len) = usize::try_from(product) {
            let picked = index::sample(rng, len, n);
            return Ok(picked.iter().map(|i| sub.configuration(&decode(i as u128))).collect());
        }
    }
    if product <= MATERIALIZE_LIMIT {
        let valid: Vec<u128> = (0..product).filter(|&i| !sub.is_excluded(&decode(i))).collect();
        let picked = index::sample(rng, valid.len(), n);
        return Ok(picked.iter().map(|i| sub.configuration(&decode(valid[i]))).collect());
    }
    // Huge space with exclusions: rejection sampling of distinct indices.
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > n.saturating_mul(1000).max(1_000_000) {
            return Err(Error::Infeasible {
                message: "rejection sampling did not converge".into(),
            });
        }
        let i = rng.random_range(0..product);
        let levels = decode(i);
        if sub.is_excluded(&levels) || !seen.insert(i) {
            continue;
        }
        out.push(sub.configuration(&levels));
    }
    Ok(out)
}

/// Stratified sample over the roles of `stratum_factor`: allocation is equal
/// across its levels up to one, with the remainder given to strata chosen
/// at random; within a stratum, draws are simple random without replacement.
pub fn stratified_sample(space: &ConfigSpace, stratum_factor: &str, n: usize, seed: u64) -> Result<Vec<Configuration>> {
    let si = space.require_factor(stratum_factor)?;
    let factor = &space.factors()[si];
    if !factor.stratum {
        return Err(Error::invalid(stratum_factor, "factor is not marked as a stratum"));
    }
    let strata = factor.levels.len();
    if n < strata {
        return Err(Error::Infeasible {
            message: format!("sample of {n} cannot cover {strata} strata"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut allocation = vec![n / strata; strata];
    for s in index::sample(&mut rng, strata, n % strata) {
        allocation[s] += 1;
    }
    let roles = RoleSet::of(factor.role);
    let uniform = space.has_uniform_weights(roles);
    let mut out = Vec::with_capacity(n);
    for (li, &take) in allocation.iter().enumerate() {
        let sub = SubSpace::new(space, roles).restrict(si, vec![li]);
        let drawn = sample_subspace(&sub, take, uniform, &mut rng).map_err(|_| Error::Infeasible {
            message: format!(
                "stratum {}={} has {} valid configurations, {} allocated",
                stratum_factor,
                factor.levels[li].label,
                sub.count(),
                take
            ),
        })?;
        out.extend(drawn);
    }
    Ok(out)
}

/// Per-stratum allocation sizes, exposed for reporting.
pub fn stratum_allocation(sample: &[Configuration], stratum_factor: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for c in sample {
        if let Some(label) = c.get(stratum_factor) {
            *counts.entry(label.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// Randomized controlled trial: `n` DC configurations without replacement,
/// shuffled, the first half completed with the control level and the second
/// half with the treatment level.
pub fn rct_plan(
    space: &ConfigSpace,
    cui_control: &str,
    cui_treatment: &str,
    n: usize,
    r: u32,
    seed: u64,
) -> Result<DesignPlan> {
    check_r(r)?;
    if n % 2 != 0 {
        return Err(Error::invalid("n", format!("RCT sample size must be even, got {n}")));
    }
    let cui = space.cui_index();
    space.require_level(cui, cui_control)?;
    space.require_level(cui, cui_treatment)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"rct", &seed.to_le_bytes()]));
    let sub = SubSpace::new(space, RoleSet::DC);
    let mut dcs = sample_subspace(&sub, n, space.has_uniform_weights(RoleSet::DC), &mut rng)?;
    dcs.shuffle(&mut rng);

    let meta = PlanMetadata {
        sample_size: n,
        control: Some(cui_control.to_string()),
        treatment: Some(cui_treatment.to_string()),
        ..Default::default()
    };
    let mut plan = DesignPlan::new(Method::Rct, space, r, seed, meta);
    for (i, dc) in dcs.iter().enumerate() {
        let (level, group) = if i < n / 2 {
            (cui_control, Group::Control)
        } else {
            (cui_treatment, Group::Treatment)
        };
        let (config, _) = space.pair_with(dc, level, level)?;
        plan.push_replicates(&config, group);
    }
    Ok(plan)
}

/// Paired plan: each DC configuration is completed with both CUI levels;
/// per replicate the two arms are adjacent in trial order.
pub fn paired_plan(
    space: &ConfigSpace,
    cui_a: &str,
    cui_ref: &str,
    dc_sample: &[Configuration],
    r: u32,
    seed: u64,
) -> Result<DesignPlan> {
    check_r(r)?;
    let cui = space.cui_index();
    space.require_level(cui, cui_a)?;
    space.require_level(cui, cui_ref)?;
    let meta = PlanMetadata {
        sample_size: dc_sample.len(),
        cui_a: Some(cui_a.to_string()),
        cui_ref: Some(cui_ref.to_string()),
        ..Default::default()
    };
    let mut plan = DesignPlan::new(Method::Paired, space, r, seed, meta);
    plan.trials.reserve(dc_sample.len() * 2 * r as usize);
    for (pair_id, dc) in dc_sample.iter().enumerate() {
        let (a, b) = space.pair_with(dc, cui_a, cui_ref)?;
        let pair_id = pair_id as u32;
        for replicate in 0..r {
            for (config, arm) in [(&a, Arm::A), (&b, Arm::Ref)] {
                plan.trials.push(Trial {
                    config: config.clone(),
                    replicate,
                    group: Group::Pair { pair_id, arm },
                    seed: trial_seed(seed, config, replicate),
                });
            }
        }
    }
    Ok(plan)
}

/// The DC part of each pair in a paired plan, ordered by pair id.
pub fn paired_dc_sample(space: &ConfigSpace, plan: &DesignPlan) -> Vec<Configuration> {
    let mut out = Vec::new();
    for t in &plan.trials {
        if let Group::Pair { pair_id, arm: Arm::A } = t.group {
            if t.replicate == 0 && pair_id as usize == out.len() {
                out.push(t.config.project_out(space, Role::Cui));
            }
        }
    }
    out
}
