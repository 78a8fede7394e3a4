//! Cross-module properties: space → design → runner → stats.

use std::collections::{BTreeMap, HashSet};

use attrib_core::runner::simulate;
use attrib_core::space::Exclusion;
use attrib_core::stats::{self, EffectOptions};
use attrib_core::{design, ConfigSpace, Configuration, DesignPlan, Factor, Role, RoleSet, SyntheticModel};
use proptest::prelude::*;

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn space_from(levels: &[usize], exclusions: Vec<Exclusion>) -> ConfigSpace {
    let mut factors = vec![Factor::with_labels("cui", Role::Cui, &labels("c", levels[0]))];
    for (i, &n) in levels[1..].iter().enumerate() {
        factors.push(Factor::with_labels(format!("f{i}"), Role::Dc, &labels(&format!("f{i}_"), n)));
    }
    ConfigSpace::new(factors, exclusions).unwrap()
}

/// Every assignment of the factors in `roles`, without the space's own enumerator.
fn brute_force(space: &ConfigSpace, roles: RoleSet) -> Vec<Configuration> {
    let factors: Vec<&Factor> = space.factors().iter().filter(|f| roles.contains(f.role)).collect();
    let mut out = vec![Vec::<(String, String)>::new()];
    for f in factors {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                f.levels.iter().map(move |l| {
                    let mut p = prefix.clone();
                    p.push((f.name.clone(), l.label.clone()));
                    p
                })
            })
            .collect();
    }
    out.into_iter()
        .map(Configuration::from_pairs)
        .filter(|c| !space.is_excluded(c))
        .collect()
}

fn arb_space() -> impl Strategy<Value = ConfigSpace> {
    (2usize..4, prop::collection::vec(1usize..5, 1..4), any::<u64>()).prop_map(|(cui, dc, salt)| {
        let mut levels = vec![cui];
        levels.extend(&dc);
        // One DC-only exclusion chosen from the salt, when it leaves something.
        let f = (salt as usize) % dc.len();
        let l = (salt as usize / 7) % dc[f];
        let exclusion: Exclusion = BTreeMap::from([(format!("f{f}"), format!("f{f}_{l}"))]);
        let exclusions = if dc[f] > 1 { vec![exclusion] } else { vec![] };
        space_from(&levels, exclusions)
    })
}

fn arb_model(space: &ConfigSpace, seed: u64) -> SyntheticModel {
    let mut model = SyntheticModel::new(100.0);
    let mut x = seed | 1;
    let mut next = move || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        (x % 2001) as f64 / 100.0 - 10.0
    };
    for f in space.factors() {
        for l in &f.levels {
            model = model.with_main(&f.name, &l.label, next());
        }
    }
    let cui = space.cui_factor();
    for f in space.factors().iter().filter(|f| f.role == Role::Dc) {
        let level = &f.levels[f.levels.len() - 1].label;
        model = model.with_interaction(&[(&cui.name, &cui.levels[1].label), (&f.name, level)], next());
    }
    model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_matches_brute_force(space in arb_space()) {
        for roles in [RoleSet::ALL, RoleSet::DC] {
            let expected: HashSet<_> = brute_force(&space, roles).iter().map(Configuration::id).collect();
            let got: Vec<_> = space.enumerate(roles, u64::MAX).unwrap().map(|c| c.id()).collect();
            prop_assert_eq!(got.len(), expected.len());
            prop_assert_eq!(got.iter().copied().collect::<HashSet<_>>(), expected);
        }
    }

    #[test]
    fn config_id_ignores_assignment_order(pairs in prop::collection::btree_map("[a-z]{1,4}", "[a-z0-9]{1,4}", 1..6)) {
        let forward: Vec<_> = pairs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut backward = forward.clone();
        backward.reverse();
        prop_assert_eq!(Configuration::from_pairs(forward).id(), Configuration::from_pairs(backward).id());
    }

    #[test]
    fn zero_noise_enumeration_equals_closed_form(space in arb_space(), seed in any::<u64>()) {
        let model = arb_model(&space, seed);
        let cui = space.cui_factor();
        let (a, r) = (cui.levels[1].label.clone(), cui.levels[0].label.clone());
        let dcs: Vec<_> = space.enumerate(RoleSet::DC, u64::MAX).unwrap().collect();
        prop_assume!(dcs.len() >= 2);
        let plan = design::paired_plan(&space, &a, &r, &dcs, 1, seed).unwrap();
        let log = simulate(&plan, &model);
        let est = stats::paired_effect(&log, &plan, &EffectOptions::default()).unwrap();
        let closed = model.closed_form_delta(&space, &a, &r).unwrap();
        prop_assert!((est.delta_e - closed).abs() <= 1e-12 * closed.abs().max(1.0));
    }

    #[test]
    fn plans_round_trip_through_json(space in arb_space(), seed in any::<u64>(), r in 1u32..4) {
        let dcs = design::simple_random_sample(&space, RoleSet::DC, 1, seed).unwrap();
        let cui = space.cui_factor();
        let plan = design::paired_plan(&space, &cui.levels[1].label, &cui.levels[0].label, &dcs, r, seed).unwrap();
        let back = DesignPlan::from_json(&plan.to_json()).unwrap();
        prop_assert_eq!(back.digest(), plan.digest());
        prop_assert_eq!(back, plan);
    }

    #[test]
    fn anova_partitions_total_ss(seed in any::<u64>(), r in 2u32..4) {
        let space = space_from(&[2, 3, 2], vec![]);
        let model = arb_model(&space, seed).with_noise(1.0);
        let mut plan = design::full_factorial(&space, r, u64::MAX).unwrap();
        plan.master_seed = seed;
        for t in &mut plan.trials {
            t.seed = design::trial_seed(seed, &t.config, t.replicate);
        }
        let log = simulate(&plan, &model);
        let table = stats::anova(&log, &plan, &space, 0.01).unwrap();
        prop_assert_eq!(table.rows.len(), 7);
        let sum: f64 = table.rows.iter().map(|row| row.ss).sum::<f64>() + table.error_row.ss;
        prop_assert!((sum - table.total_ss).abs() <= 1e-9 * table.total_ss);
    }
}

#[test]
fn stratified_sample_covers_every_stratum() {
    let mut factors = space_from(&[2, 5, 6, 4], vec![]).factors().to_vec();
    factors[1] = factors[1].clone().stratum();
    let space = ConfigSpace::new(factors, vec![]).unwrap();
    for n in [5, 12, 40] {
        let sample = design::stratified_sample(&space, "f0", n, 3).unwrap();
        assert_eq!(sample.len(), n);
        let alloc = design::stratum_allocation(&sample, "f0");
        assert_eq!(alloc.len(), 5);
        let (lo, hi) = (alloc.values().min().unwrap(), alloc.values().max().unwrap());
        assert!(hi - lo <= 1, "{alloc:?}");
    }
}

#[test]
fn rct_arms_are_disjoint_dc_samples() {
    let space = space_from(&[2, 4, 5], vec![]);
    let plan = design::rct_plan(&space, "c0", "c1", 10, 2, 8).unwrap();
    assert_eq!(plan.trials.len(), 20);
    let dcs: HashSet<_> = plan
        .trials
        .iter()
        .map(|t| t.config.project_out(&space, Role::Cui).id())
        .collect();
    assert_eq!(dcs.len(), 10);
}
