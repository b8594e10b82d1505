//! Joint cache/power selection as a multiple-choice knapsack over APs.
//!
//! Each AP is a class. Item `j` of class `n` caches the `j` most popular
//! files and water-fills the remaining power; its profit is the AP's sum rate
//! and its weight the backhaul traffic of cache misses. At most one item per
//! class may be chosen, and total weight must fit the backhaul capacity.
//! The capacity axis is quantized; profits stay real.

use std::io::Write;

use thiserror::Error;

use crate::caching::PopularityModel;
use crate::channel::ChannelRealization;
use crate::config::ValidatedConfig;
use crate::geometry::Deployment;
use crate::waterfill::{vabwf, WaterfillResult};

#[derive(Debug, Error, PartialEq)]
pub enum MckpError {
    #[error("backtracked value {got} does not match table value {expected}")]
    CorruptTable { expected: f64, got: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateItem {
    pub ap: usize,
    /// Number of most-popular files cached.
    pub cached: usize,
    /// Backhaul occupied, `p_miss(j) · ν`, bit/s.
    pub weight: f64,
    /// Sum rate of the AP's UEs, bit/s.
    pub profit: f64,
    pub hit_ratio: f64,
    /// `None` only for APs without UEs.
    pub wf: Option<WaterfillResult>,
}

/// Per-AP candidate lists, ordered by ascending cached count.
pub fn build_candidates(
    dep: &Deployment,
    ch: &ChannelRealization,
    pop: &PopularityModel,
    cfg: &ValidatedConfig,
) -> Vec<Vec<CandidateItem>> {
    let j_max = cfg.max_cached_files();
    (0..dep.num_aps())
        .map(|ap| {
            let gains = ch.gains(ap);
            if gains.is_empty() {
                return vec![CandidateItem {
                    ap,
                    cached: 0,
                    weight: 0.0,
                    profit: 0.0,
                    hit_ratio: 0.0,
                    wf: None,
                }];
            }
            (0..=j_max)
                .filter_map(|j| {
                    let wf = vabwf(&gains, j, cfg).ok()?;
                    let hit = pop.prefix_mass(j);
                    Some(CandidateItem {
                        ap,
                        cached: j,
                        weight: (1.0 - hit).max(0.0) * wf.sum_rate,
                        profit: wf.sum_rate,
                        hit_ratio: hit,
                        wf: Some(wf),
                    })
                })
                .collect()
        })
        .collect()
}

/// An item with its weight expressed in capacity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedItem {
    /// Index into the class's candidate list.
    pub index: usize,
    pub cached: usize,
    pub units: usize,
    pub profit: f64,
}

/// `units = ceil(φ / unit)`, so a quantized-feasible pick is truly feasible.
pub fn quantize_weights(items: &[Vec<CandidateItem>], unit: f64) -> Vec<Vec<QuantizedItem>> {
    assert!(unit > 0.0, "quantization unit must be positive");
    items
        .iter()
        .map(|class| {
            class
                .iter()
                .enumerate()
                .map(|(index, it)| QuantizedItem {
                    index,
                    cached: it.cached,
                    units: (it.weight / unit).ceil() as usize,
                    profit: it.profit,
                })
                .collect()
        })
        .collect()
}

const NO_ITEM: u32 = u32::MAX;

/// `values[n][c]` is the best profit using the first `n` classes within `c`
/// units; row 0 is all zeros. `choice[n-1][c]` is the item taken by class `n`
/// when that beats skipping it.
#[derive(Debug, Clone)]
pub struct DpTable {
    values: Vec<Vec<f64>>,
    choice: Vec<Vec<u32>>,
    capacity: usize,
}

impl DpTable {
    pub fn value(&self, n: usize, c: usize) -> f64 {
        self.values[n][c]
    }

    pub fn choice(&self, n: usize, c: usize) -> Option<usize> {
        match self.choice[n - 1][c] {
            NO_ITEM => None,
            i => Some(i as usize),
        }
    }

    pub fn classes(&self) -> usize {
        self.values.len() - 1
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn optimum(&self) -> f64 {
        self.values[self.classes()][self.capacity]
    }

    /// `R(N, c)` for every capacity level.
    pub fn frontier(&self) -> &[f64] {
        &self.values[self.classes()]
    }
}

/// Bottom-up recursion `R(n,c) = max(R(n-1,c), max_j R(n-1,c-w_j) + ν_j)`.
///
/// Ties prefer skipping, then the item with the larger cached count.
pub fn dp_solve(items: &[Vec<QuantizedItem>], capacity: usize) -> DpTable {
    let width = capacity + 1;
    let mut values = Vec::with_capacity(items.len() + 1);
    values.push(vec![0.0; width]);
    let mut choice = Vec::with_capacity(items.len());
    for class in items {
        let prev = values.last().expect("row 0 present");
        let mut cur = prev.clone();
        let mut pick = vec![NO_ITEM; width];
        let mut order: Vec<&QuantizedItem> = class.iter().collect();
        order.sort_by_key(|q| std::cmp::Reverse(q.cached));
        for it in order {
            if it.units > capacity {
                continue;
            }
            let w = it.units;
            let tag = it.index as u32;
            for c in w..width {
                let cand = prev[c - w] + it.profit;
                if cand > cur[c] {
                    cur[c] = cand;
                    pick[c] = tag;
                }
            }
        }
        values.push(cur);
        choice.push(pick);
    }
    DpTable {
        values,
        choice,
        capacity,
    }
}

/// Chosen item index per class (into the candidate list) and its value.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub choices: Vec<Option<usize>>,
    pub value: f64,
    pub units_used: usize,
}

pub fn backtrack(table: &DpTable, items: &[Vec<QuantizedItem>]) -> Result<Selection, MckpError> {
    let n_classes = table.classes();
    let mut choices = vec![None; n_classes];
    let mut c = table.capacity;
    for n in (1..=n_classes).rev() {
        if table.value(n, c) != table.value(n - 1, c) {
            let expected = table.optimum();
            let idx = table.choice(n, c).ok_or(MckpError::CorruptTable {
                expected,
                got: f64::NAN,
            })?;
            let it = items[n - 1]
                .iter()
                .find(|q| q.index == idx)
                .ok_or(MckpError::CorruptTable {
                    expected,
                    got: f64::NAN,
                })?;
            choices[n - 1] = Some(idx);
            c = c.checked_sub(it.units).ok_or(MckpError::CorruptTable {
                expected,
                got: f64::NAN,
            })?;
        }
    }
    // same summation order as the recursion, so equality is exact
    let mut value = 0.0;
    let mut units_used = 0;
    for (n, ch) in choices.iter().enumerate() {
        if let Some(idx) = ch {
            let it = items[n].iter().find(|q| q.index == *idx).expect("checked above");
            value += it.profit;
            units_used += it.units;
        }
    }
    if value != table.optimum() {
        return Err(MckpError::CorruptTable {
            expected: table.optimum(),
            got: value,
        });
    }
    Ok(Selection {
        choices,
        value,
        units_used,
    })
}

/// The selected operating point of every AP.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    /// Candidate index per AP, `None` when the AP is left unserved.
    pub choices: Vec<Option<usize>>,
    /// Σ ν over chosen items, bit/s.
    pub throughput: f64,
    /// Σ φ over chosen items (unquantized), bit/s.
    pub backhaul_load: f64,
    pub cached: Vec<usize>,
    /// Radiated power per UE for each AP.
    pub powers: Vec<Vec<f64>>,
    pub hit_ratio: Vec<f64>,
}

impl JointSolution {
    pub fn from_selection(sel: &Selection, candidates: &[Vec<CandidateItem>]) -> Self {
        let mut throughput = 0.0;
        let mut backhaul_load = 0.0;
        let mut cached = Vec::with_capacity(candidates.len());
        let mut powers = Vec::with_capacity(candidates.len());
        let mut hit_ratio = Vec::with_capacity(candidates.len());
        for (class, choice) in candidates.iter().zip(&sel.choices) {
            match choice.map(|i| &class[i]) {
                Some(it) => {
                    throughput += it.profit;
                    backhaul_load += it.weight;
                    cached.push(it.cached);
                    hit_ratio.push(it.hit_ratio);
                    powers.push(it.wf.as_ref().map(|w| w.powers.clone()).unwrap_or_default());
                }
                None => {
                    cached.push(0);
                    hit_ratio.push(0.0);
                    let ues = class.first().and_then(|it| it.wf.as_ref()).map_or(0, |w| w.powers.len());
                    powers.push(vec![0.0; ues]);
                }
            }
        }
        Self {
            choices: sel.choices.clone(),
            throughput,
            backhaul_load,
            cached,
            powers,
            hit_ratio,
        }
    }
}

/// Capacity in units, clamped to what all classes together could ever use.
pub fn effective_capacity(quantized: &[Vec<QuantizedItem>], cfg: &ValidatedConfig) -> usize {
    let reachable: usize = quantized
        .iter()
        .map(|class| class.iter().map(|q| q.units).max().unwrap_or(0))
        .sum();
    match cfg.capacity_units() {
        Some(c) => c.min(reachable),
        None => reachable,
    }
}

/// Candidates → quantize → DP → backtrack.
pub fn solve(
    candidates: &[Vec<CandidateItem>],
    cfg: &ValidatedConfig,
) -> Result<JointSolution, MckpError> {
    let quantized = quantize_weights(candidates, cfg.dp_bandwidth_unit);
    let table = dp_solve(&quantized, effective_capacity(&quantized, cfg));
    let sel = backtrack(&table, &quantized)?;
    Ok(JointSolution::from_selection(&sel, candidates))
}

/// Candidate table as CSV: `n,j,weight_units,profit_bps`.
pub fn write_candidates_csv<W: Write>(
    out: W,
    candidates: &[Vec<CandidateItem>],
    unit: f64,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "j", "weight_units", "profit_bps"])?;
    for (n, class) in quantize_weights(candidates, unit).iter().enumerate() {
        for q in class {
            w.write_record(&[
                n.to_string(),
                q.cached.to_string(),
                q.units.to_string(),
                q.profit.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Last DP row as CSV: `n,c_units,value_bps`.
pub fn write_frontier_csv<W: Write>(out: W, table: &DpTable) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "c_units", "value_bps"])?;
    let n = table.classes();
    for (c, v) in table.frontier().iter().enumerate() {
        w.write_record(&[n.to_string(), c.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NetworkConfig;
    use crate::rng::RandomStream;
    use proptest::prelude::*;
    use rand::Rng;

    fn item(index: usize, cached: usize, units: usize, profit: f64) -> QuantizedItem {
        QuantizedItem {
            index,
            cached,
            units,
            profit,
        }
    }

    /// Exhaustive best over "skip or one item" per class for the first `n` classes.
    fn brute(items: &[Vec<QuantizedItem>], n: usize, cap: usize) -> f64 {
        fn go(items: &[Vec<QuantizedItem>], cap: usize) -> f64 {
            match items.split_first() {
                None => 0.0,
                Some((head, rest)) => {
                    let mut best = go(rest, cap);
                    for it in head {
                        if it.units <= cap {
                            best = best.max(it.profit + go(rest, cap - it.units));
                        }
                    }
                    best
                }
            }
        }
        go(&items[..n], cap)
    }

    fn random_instance(rng: &mut RandomStream, classes: usize, per: usize, max_w: usize) -> Vec<Vec<QuantizedItem>> {
        (0..classes)
            .map(|_| {
                let k = rng.random_range(1..=per);
                (0..k)
                    .map(|j| item(j, j, rng.random_range(0..=max_w), f64::from(rng.random_range(0u32..1000))))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_class_takes_best_fitting_item() {
        let items = vec![vec![item(0, 0, 5, 10.0), item(1, 1, 2, 4.0), item(2, 2, 0, 1.0)]];
        let t = dp_solve(&items, 6);
        assert_eq!(t.frontier(), &[1.0, 1.0, 4.0, 4.0, 4.0, 10.0, 10.0]);
        assert_eq!(t.choice(1, 3), Some(1));
    }

    #[test]
    fn zero_capacity_skips_heavy_class() {
        let items = vec![vec![item(0, 0, 0, 3.0)], vec![item(0, 0, 1, 50.0), item(1, 1, 2, 9.0)]];
        let t = dp_solve(&items, 0);
        assert_eq!(t.optimum(), 3.0);
        let s = backtrack(&t, &items).unwrap();
        assert_eq!(s.choices, vec![Some(0), None]);
    }

    #[test]
    fn weightless_items_pick_max_profit() {
        let items = vec![
            vec![item(0, 0, 0, 1.0), item(1, 1, 0, 7.0), item(2, 2, 0, 3.0)],
            vec![item(0, 0, 0, 2.0), item(1, 1, 0, 2.5)],
        ];
        let t = dp_solve(&items, 10);
        let s = backtrack(&t, &items).unwrap();
        assert_eq!(s.choices, vec![Some(1), Some(1)]);
        assert_eq!(s.value, 9.5);
    }

    #[test]
    fn skipping_an_ap_can_be_optimal() {
        // class 1's cheapest item needs 8 units but only 5 remain after class 0
        let items = vec![
            vec![item(0, 0, 5, 40.0)],
            vec![item(0, 0, 8, 30.0), item(1, 1, 9, 35.0)],
        ];
        let t = dp_solve(&items, 10);
        let s = backtrack(&t, &items).unwrap();
        assert_eq!(s.choices, vec![Some(0), None]);
        assert_eq!(s.value, 40.0);
    }

    #[test]
    fn ties_prefer_larger_cached_count() {
        let items = vec![vec![item(0, 0, 1, 5.0), item(1, 7, 1, 5.0), item(2, 3, 1, 5.0)]];
        let t = dp_solve(&items, 1);
        assert_eq!(t.choice(1, 1), Some(1));
    }

    #[test]
    fn backtrack_matches_table_on_random_instances() {
        let mut rng = RandomStream::new(42);
        for _ in 0..100 {
            let items = random_instance(&mut rng, 6, 8, 30);
            let t = dp_solve(&items, 60);
            let s = backtrack(&t, &items).unwrap();
            assert_eq!(s.value, t.optimum());
            assert!(s.units_used <= 60);
        }
    }

    #[test]
    fn corrupt_table_is_detected() {
        let items = vec![vec![item(0, 0, 1, 5.0)]];
        let mut t = dp_solve(&items, 1);
        t.values[1][1] = 6.0;
        assert!(matches!(backtrack(&t, &items), Err(MckpError::CorruptTable { .. })));
    }

    #[test]
    fn quantization_uses_ceiling() {
        let it = |w: f64| CandidateItem {
            ap: 0,
            cached: 0,
            weight: w,
            profit: 1.0,
            hit_ratio: 0.0,
            wf: None,
        };
        let q = quantize_weights(&[vec![it(0.0), it(1.2e6), it(3e6)]], 1e6);
        let units: Vec<_> = q[0].iter().map(|q| q.units).collect();
        assert_eq!(units, vec![0, 2, 3]);
    }

    proptest! {
        #[test]
        fn optimal_substructure_audit(seed in any::<u64>()) {
            let mut rng = RandomStream::new(seed);
            let classes = rng.random_range(1..=4);
            let items = random_instance(&mut rng, classes, 6, 20);
            let cap = rng.random_range(0..=50);
            let t = dp_solve(&items, cap);
            for n in 0..=classes {
                for c in 0..=cap {
                    prop_assert_eq!(t.value(n, c), brute(&items, n, c));
                    if c > 0 {
                        prop_assert!(t.value(n, c) >= t.value(n, c - 1));
                    }
                    if n > 0 {
                        prop_assert!(t.value(n, c) >= t.value(n - 1, c));
                    }
                }
            }
        }
    }

    #[test]
    fn default_candidate_count() {
        let cfg = NetworkConfig::default().validate().unwrap();
        let layout = crate::geometry::deploy_aps(&cfg).unwrap();
        let mut rng = RandomStream::new(1);
        let ues = crate::geometry::sample_ues(&cfg, &mut rng);
        let dep = crate::geometry::associate(&layout, &ues, &cfg);
        let ch = crate::channel::realize_channel(&dep, &cfg, &mut rng);
        let pop = crate::caching::zipf_popularity(cfg.num_files, cfg.zipf_delta);
        let cands = build_candidates(&dep, &ch, &pop, &cfg);
        for (n, class) in cands.iter().enumerate() {
            if dep.assoc[n].is_empty() {
                assert_eq!(class.len(), 1);
                assert_eq!((class[0].weight, class[0].profit), (0.0, 0.0));
                continue;
            }
            assert_eq!(class.len(), 401);
            assert_eq!(class[0].weight, class[0].profit);
            for it in class {
                assert!((it.weight - (1.0 - it.hit_ratio) * it.profit).abs() <= 1e-6 * it.profit);
            }
        }
        // full catalogue cached: no miss traffic
        let all = cfg
            .with(|c| {
                c.num_files = 100;
                c.cache_size = 1e12;
            })
            .unwrap();
        let pop = crate::caching::zipf_popularity(all.num_files, all.zipf_delta);
        let cands = build_candidates(&dep, &ch, &pop, &all);
        let busy = dep.assoc.iter().position(|a| !a.is_empty()).unwrap();
        let last = cands[busy].last().unwrap();
        assert_eq!(last.cached, 100);
        assert_eq!(last.weight, 0.0);
    }
}
