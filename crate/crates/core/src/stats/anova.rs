use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::special::f_quantile;
use super::ttest::check_alpha;
use super::{compensated_sum, exact_mean};
use crate::design::{DesignPlan, Method};
use crate::error::{Error, Result};
use crate::runner::{replicate_values, RunLog};
use crate::space::ConfigSpace;

pub const MAX_ANOVA_FACTORS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub component: Vec<String>,
    pub ss: f64,
    pub df: u64,
    pub pct: f64,
    pub f_computed: f64,
    pub f_critical: f64,
    pub significant: bool,
}

impl AnovaRow {
    pub fn label(&self) -> String {
        self.component.join("-")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub ss: f64,
    pub df: u64,
    pub pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub rows: Vec<AnovaRow>,
    pub error_row: ErrorRow,
    pub total_ss: f64,
    pub alpha: f64,
}

impl AnovaTable {
    pub fn row(&self, component: &[&str]) -> Option<&AnovaRow> {
        self.rows
            .iter()
            .find(|r| r.component.len() == component.len() && r.component.iter().zip(component).all(|(a, b)| a == b))
    }
}

/// ANOVA of a replicated full-factorial log. Factors with a single level
/// are constant and left out of the decomposition.
pub fn anova(log: &RunLog, plan: &DesignPlan, space: &ConfigSpace, alpha: f64) -> Result<AnovaTable> {
    if plan.method != Method::FullFactorial {
        return Err(Error::Domain(format!("ANOVA needs a full_factorial plan, got {}", plan.method)));
    }
    let varied: Vec<usize> = (0..space.factors().len())
        .filter(|&i| space.factors()[i].levels.len() > 1)
        .collect();
    let factors: Vec<(String, usize)> = varied
        .iter()
        .map(|&i| (space.factors()[i].name.clone(), space.factors()[i].levels.len()))
        .collect();
    let cell_count: usize = factors.iter().map(|f| f.1).product();
    let mut cells: Vec<Option<Vec<f64>>> = vec![None; cell_count];
    for (config, values) in replicate_values(log, plan)? {
        let mut index = 0;
        for &fi in &varied {
            let f = &space.factors()[fi];
            let label = config
                .get(&f.name)
                .ok_or_else(|| Error::Domain(format!("configuration lacks factor '{}'", f.name)))?;
            let li = f
                .level_index(label)
                .ok_or_else(|| Error::Domain(format!("unknown level '{label}' of '{}'", f.name)))?;
            index = index * f.levels.len() + li;
        }
        if cells[index].replace(values).is_some() {
            return Err(Error::Domain("duplicate cell in the design".into()));
        }
    }
    let missing = cells.iter().filter(|c| c.is_none()).count();
    if missing > 0 {
        return Err(Error::Domain(format!(
            "unbalanced design: {missing} of {cell_count} cells have no observations"
        )));
    }
    let cells: Vec<Vec<f64>> = cells.into_iter().map(Option::unwrap).collect();
    anova_balanced(&factors, &cells, alpha)
}

/// Balanced n-way ANOVA with all interactions.
///
/// `factors` lists (name, level count); `cells` holds the replicates of each
/// cell in lexicographic level order with the first factor most significant.
pub fn anova_balanced(factors: &[(String, usize)], cells: &[Vec<f64>], alpha: f64) -> Result<AnovaTable> {
    check_alpha(alpha)?;
    let k = factors.len();
    if k == 0 || k > MAX_ANOVA_FACTORS {
        return Err(Error::Domain(format!(
            "ANOVA supports 1 to {MAX_ANOVA_FACTORS} factors with at least 2 levels, got {k}"
        )));
    }
    if let Some((name, _)) = factors.iter().find(|f| f.1 < 2) {
        return Err(Error::Domain(format!("factor '{name}' needs at least 2 levels")));
    }
    let levels: Vec<usize> = factors.iter().map(|f| f.1).collect();
    let cell_count: usize = levels.iter().product();
    if cells.len() != cell_count {
        return Err(Error::Domain(format!("expected {cell_count} cells, got {}", cells.len())));
    }
    let r = cells[0].len();
    if cells.iter().any(|c| c.len() != r) {
        return Err(Error::Domain("unbalanced design: cells differ in replicate count".into()));
    }
    if r < 2 {
        return Err(Error::Domain("ANOVA needs r >= 2 replicates per cell for an error term".into()));
    }
    if cells.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("ANOVA input contains non-finite values".into()));
    }

    let n_obs = (cell_count * r) as f64;
    let all: Vec<f64> = cells.iter().flatten().copied().collect();
    let grand = exact_mean(&all);
    let total_ss = compensated_sum(all.iter().map(|y| (y - grand) * (y - grand)));
    let cell_means: Vec<f64> = cells.iter().map(|c| exact_mean(c)).collect();
    let error_ss = compensated_sum(
        cells
            .iter()
            .zip(&cell_means)
            .flat_map(|(c, m)| c.iter().map(move |y| (y - m) * (y - m))),
    );
    let error_df = (cell_count * (r - 1)) as u64;

    // Level indices of every cell.
    let coords: Vec<Vec<usize>> = (0..cell_count)
        .map(|mut idx| {
            let mut c = vec![0; k];
            for j in (0..k).rev() {
                c[j] = idx % levels[j];
                idx /= levels[j];
            }
            c
        })
        .collect();
    let project = |coord: &[usize], mask: usize| -> usize {
        (0..k)
            .filter(|j| mask & (1 << j) != 0)
            .fold(0, |acc, j| acc * levels[j] + coord[j])
    };

    // Marginal means of the cell means for every factor subset.
    let subsets = 1usize << k;
    let marginals: Vec<Vec<f64>> = (0..subsets)
        .map(|mask| {
            let size: usize = (0..k).filter(|j| mask & (1 << j) != 0).map(|j| levels[j]).product();
            let mut buckets = vec![Vec::new(); size];
            for (c, m) in coords.iter().zip(&cell_means) {
                buckets[project(c, mask)].push(*m);
            }
            buckets.iter().map(|b| exact_mean(b)).collect()
        })
        .collect();

    let mut order: Vec<usize> = (1..subsets).collect();
    order.sort_by_key(|&m| {
        let members: Vec<usize> = (0..k).filter(|j| m & (1 << j) != 0).collect();
        (members.len(), members)
    });

    let mut rows = Vec::with_capacity(subsets - 1);
    for mask in order {
        let members: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let size: usize = members.iter().map(|&j| levels[j]).product();
        // Effect of each level combination in `mask` by inclusion-exclusion
        // over the marginal means of its subsets.
        let mut effects = Vec::with_capacity(size);
        let mut coord = vec![0usize; k];
        for idx in 0..size {
            let mut rem = idx;
            for &j in members.iter().rev() {
                coord[j] = rem % levels[j];
                rem /= levels[j];
            }
            let mut terms = Vec::with_capacity(1 << members.len());
            let mut sub = mask;
            loop {
                let sign = if (mask.count_ones() - sub.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
                terms.push(sign * marginals[sub][project(&coord, sub)]);
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
            effects.push(compensated_sum(terms));
        }
        let ss = n_obs / size as f64 * compensated_sum(effects.iter().map(|e| e * e));
        let df: u64 = members.iter().map(|&j| (levels[j] - 1) as u64).product();
        let f_critical = f_quantile(alpha, df as f64, error_df as f64)?;
        let (f_computed, significant) = if ss == 0.0 {
            (0.0, false)
        } else if error_ss == 0.0 {
            (f64::INFINITY, true)
        } else {
            let f = (ss / df as f64) / (error_ss / error_df as f64);
            (f, f > f_critical)
        };
        rows.push(AnovaRow {
            component: members.iter().map(|&j| factors[j].0.clone()).collect(),
            ss,
            df,
            pct: pct(ss, total_ss),
            f_computed,
            f_critical,
            significant,
        });
    }
    Ok(AnovaTable {
        rows,
        error_row: ErrorRow {
            ss: error_ss,
            df: error_df,
            pct: pct(error_ss, total_ss),
        },
        total_ss,
        alpha,
    })
}

fn pct(ss: f64, total: f64) -> f64 {
    if total > 0.0 {
        ss / total * 100.0
    } else {
        0.0
    }
}

/// Map from component label to row, for lookups in tests and reports.
pub fn rows_by_label(table: &AnovaTable) -> HashMap<String, &AnovaRow> {
    table.rows.iter().map(|r| (r.label(), r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(levels: &[usize]) -> Vec<(String, usize)> {
        levels.iter().enumerate().map(|(i, &l)| (format!("f{i}"), l)).collect()
    }

    #[test]
    fn one_factor_hand_example() {
        let t = anova_balanced(&names(&[2]), &[vec![1.0, 1.0], vec![3.0, 3.0]], 0.05).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].ss, 4.0);
        assert_eq!(t.rows[0].df, 1);
        assert_eq!(t.rows[0].pct, 100.0);
        assert_eq!(t.error_row.ss, 0.0);
        assert_eq!(t.error_row.df, 2);
        assert!(t.rows[0].significant);
    }

    #[test]
    fn constant_response() {
        let cells = vec![vec![7.25; 3]; 12];
        let t = anova_balanced(&names(&[2, 3, 2]), &cells, 0.01).unwrap();
        assert_eq!(t.rows.len(), 7);
        for row in &t.rows {
            assert_eq!(row.ss, 0.0);
            assert_eq!(row.pct, 0.0);
            assert!(!row.significant);
        }
        assert_eq!(t.total_ss, 0.0);
    }

    #[test]
    fn row_structure_and_order() {
        let cells: Vec<Vec<f64>> = (0..32).map(|i| vec![i as f64, i as f64 + 0.5]).collect();
        let t = anova_balanced(&names(&[2, 2, 2, 2, 2]), &cells, 0.01).unwrap();
        assert_eq!(t.rows.len(), 31);
        let by_order: Vec<usize> = t.rows.iter().map(|r| r.component.len()).collect();
        let counts: Vec<usize> = (1..=5).map(|o| by_order.iter().filter(|&&x| x == o).count()).collect();
        assert_eq!(counts, vec![5, 10, 10, 5, 1]);
        assert!(by_order.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(t.rows[5].component, vec!["f0", "f1"]);
        assert_eq!(t.rows[30].label(), "f0-f1-f2-f3-f4");
    }

    #[test]
    fn textbook_two_way() {
        // Two-way layout with interaction; values from an independent numpy
        // decomposition.
        let cells = vec![
            vec![12.0, 14.0],
            vec![15.0, 17.0],
            vec![20.0, 19.0],
            vec![11.0, 10.0],
            vec![19.0, 22.0],
            vec![24.0, 23.0],
        ];
        let t = anova_balanced(&names(&[2, 3]), &cells, 0.05).unwrap();
        let by = rows_by_label(&t);
        assert!((by["f0"].ss - 12.0).abs() < 1e-12);
        assert!((by["f1"].ss - 197.166_666_666_666_66).abs() < 1e-12);
        assert!((by["f0-f1"].ss - 30.5).abs() < 1e-12);
        assert!((t.error_row.ss - 10.0).abs() < 1e-12);
        assert_eq!(t.error_row.df, 6);
        assert!((by["f1"].f_critical - 5.143_252_849_784_718).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_designs() {
        assert!(anova_balanced(&names(&[2]), &[vec![1.0], vec![2.0]], 0.05).is_err());
        assert!(anova_balanced(&names(&[2]), &[vec![1.0, 2.0], vec![2.0]], 0.05).is_err());
        assert!(anova_balanced(&names(&[2, 2]), &vec![vec![1.0, 2.0]; 3], 0.05).is_err());
        assert!(anova_balanced(&names(&[2; 7]), &vec![vec![1.0, 2.0]; 128], 0.05).is_err());
        assert!(anova_balanced(&names(&[2]), &vec![vec![1.0, 2.0]; 2], 0.0).is_err());
    }

    /// Brute-force two-way decomposition straight from the definitions.
    fn two_way_oracle(a: usize, b: usize, cells: &[Vec<f64>]) -> (f64, f64, f64, f64) {
        let r = cells[0].len();
        let cell = |i: usize, j: usize| &cells[i * b + j];
        let mut grand = 0.0;
        for c in cells {
            for y in c {
                grand += y;
            }
        }
        grand /= (a * b * r) as f64;
        let mean = |vals: Vec<f64>| vals.iter().sum::<f64>() / vals.len() as f64;
        let row_mean: Vec<f64> = (0..a)
            .map(|i| mean((0..b).flat_map(|j| cell(i, j).clone()).collect()))
            .collect();
        let col_mean: Vec<f64> = (0..b)
            .map(|j| mean((0..a).flat_map(|i| cell(i, j).clone()).collect()))
            .collect();
        let mut ss_a = 0.0;
        let mut ss_b = 0.0;
        let mut ss_ab = 0.0;
        let mut ss_e = 0.0;
        for i in 0..a {
            for j in 0..b {
                let cm = mean(cell(i, j).clone());
                for y in cell(i, j) {
                    ss_a += (row_mean[i] - grand).powi(2);
                    ss_b += (col_mean[j] - grand).powi(2);
                    ss_ab += (cm - row_mean[i] - col_mean[j] + grand).powi(2);
                    ss_e += (y - cm).powi(2);
                }
            }
        }
        (ss_a, ss_b, ss_ab, ss_e)
    }

    fn close(a: f64, b: f64, scale: f64) -> bool {
        (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12 * scale)
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            a in 2usize..=4,
            b in 2usize..=4,
            r in 2usize..=3,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cells: Vec<Vec<f64>> = (0..a * b)
                .map(|_| (0..r).map(|_| rng.random_range(-50.0..50.0)).collect())
                .collect();
            let t = anova_balanced(&names(&[a, b]), &cells, 0.05).unwrap();
            let (sa, sb, sab, se) = two_way_oracle(a, b, &cells);
            let scale = t.total_ss;
            prop_assert!(close(t.rows[0].ss, sa, scale));
            prop_assert!(close(t.rows[1].ss, sb, scale));
            prop_assert!(close(t.rows[2].ss, sab, scale));
            prop_assert!(close(t.error_row.ss, se, scale));
        }

        #[test]
        fn completeness(
            levels in prop::collection::vec(2usize..=3, 1..=4),
            r in 2usize..=3,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = levels.iter().product();
            let cells: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..r).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let t = anova_balanced(&names(&levels), &cells, 0.01).unwrap();
            prop_assert_eq!(t.rows.len(), (1 << levels.len()) - 1);
            let ss: f64 = t.rows.iter().map(|r| r.ss).sum::<f64>() + t.error_row.ss;
            prop_assert!((ss - t.total_ss).abs() <= 1e-9 * t.total_ss);
            let pct: f64 = t.rows.iter().map(|r| r.pct).sum::<f64>() + t.error_row.pct;
            prop_assert!((pct - 100.0).abs() <= 1e-6);
        }
    }
}
