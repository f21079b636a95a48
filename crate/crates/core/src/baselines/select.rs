use log::warn;
use serde::{Deserialize, Serialize};

use crate::cost::CostMode;
use crate::data::{FeatureKind, FeatureSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub selected: Vec<bool>,
    pub expected_cost: f64,
}

impl SubsetSelection {
    pub fn indices(&self) -> Vec<usize> {
        (0..self.selected.len())
            .filter(|&k| self.selected[k])
            .collect()
    }
}

/// Expected per-tick cost of always fetching feature `k`: dynamic features
/// pay every tick, static ones once per sequence of mean length `mean_len`.
pub fn expected_tick_costs(specs: &[FeatureSpec], mode: CostMode, mean_len: f64) -> Vec<f64> {
    specs
        .iter()
        .map(|s| match s.kind {
            FeatureKind::Dynamic => s.fetch_cost(mode),
            FeatureKind::Static => s.fetch_cost(mode) / mean_len.max(1.0),
        })
        .collect()
}

/// Greedy admission by decreasing importance (ties to the lower index)
/// while the subset cost stays within `c_max`. Unaffordable features are
/// skipped, not terminal.
pub fn select_topk(importance: &[f64], costs: &[f64], c_max: f64) -> SubsetSelection {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let mut selected = vec![false; importance.len()];
    let mut total = 0.0;
    for k in order {
        if total + costs[k] <= c_max + 1e-12 {
            selected[k] = true;
            total += costs[k];
        }
    }
    if !selected.iter().any(|&s| s) {
        warn!("budget {c_max} is below the cheapest feature; selecting nothing");
    }
    SubsetSelection {
        selected,
        expected_cost: total,
    }
}

const VALUE_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;

/// Exact 0/1 knapsack over the real costs, by depth-first branch and bound
/// with the fractional relaxation as the bound. Ties prefer fewer features,
/// then lexicographically smaller index sets, so features with nonpositive
/// importance are never taken.
pub fn select_knapsack(importance: &[f64], costs: &[f64], budget: f64) -> SubsetSelection {
    let n = importance.len();
    let cap = budget + COST_TOL;
    let density = |k: usize| {
        if costs[k] > 0.0 {
            importance[k] / costs[k]
        } else {
            f64::INFINITY
        }
    };
    let mut items: Vec<usize> = (0..n)
        .filter(|&k| importance[k] > 0.0 && costs[k] <= cap)
        .collect();
    items.sort_by(|&a, &b| density(b).total_cmp(&density(a)).then(a.cmp(&b)));
    let mut search = Search {
        importance,
        costs,
        items: &items,
        cap,
        chosen: Vec::new(),
        best_value: 0.0,
        best: Vec::new(),
    };
    search.dfs(0, 0.0, 0.0);

    let mut selected = vec![false; n];
    for &k in &search.best {
        selected[k] = true;
    }
    if search.best.is_empty() && costs.iter().all(|&c| c > budget) {
        warn!("every feature exceeds the budget {budget}; selecting nothing");
    }
    SubsetSelection {
        selected,
        expected_cost: search.best.iter().map(|&k| costs[k]).sum(),
    }
}

struct Search<'a> {
    importance: &'a [f64],
    costs: &'a [f64],
    /// Candidates by decreasing importance per unit cost.
    items: &'a [usize],
    cap: f64,
    chosen: Vec<usize>,
    best_value: f64,
    /// Sorted indices of the incumbent.
    best: Vec<usize>,
}

impl Search<'_> {
    fn bound(&self, i: usize, cost: f64, value: f64) -> f64 {
        let mut room = self.cap - cost;
        let mut b = value;
        for &k in &self.items[i..] {
            if self.costs[k] <= room {
                room -= self.costs[k];
                b += self.importance[k];
            } else {
                return b + self.importance[k] * room / self.costs[k];
            }
        }
        b
    }

    fn dfs(&mut self, i: usize, cost: f64, value: f64) {
        if i == self.items.len() {
            self.offer(value);
            return;
        }
        if self.bound(i, cost, value) < self.best_value - VALUE_TOL {
            return;
        }
        let k = self.items[i];
        if cost + self.costs[k] <= self.cap {
            self.chosen.push(k);
            self.dfs(i + 1, cost + self.costs[k], value + self.importance[k]);
            self.chosen.pop();
        }
        self.dfs(i + 1, cost, value);
    }

    fn offer(&mut self, value: f64) {
        let better = if value > self.best_value + VALUE_TOL {
            true
        } else if value < self.best_value - VALUE_TOL {
            false
        } else if self.chosen.len() != self.best.len() {
            self.chosen.len() < self.best.len()
        } else {
            let mut set = self.chosen.clone();
            set.sort_unstable();
            set < self.best
        };
        if better {
            self.best.clone_from(&self.chosen);
            self.best.sort_unstable();
            self.best_value = value;
        }
    }
}
