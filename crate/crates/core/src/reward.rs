//! Prediction and cost rewards, the cost gate, and the cost-coefficient
//! schedule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Gate steepness.
    pub alpha: f64,
    /// Initial cost coefficient.
    pub beta: f64,
    pub delta_beta: f64,
    pub c_base: f64,
    /// Floor on the baseline loss in the regression reward, in label units.
    pub l_eps: f64,
    pub ema_coeff: f64,
    /// Validation-cost decrease per `plateau_steps` environment steps below
    /// which the cost coefficient is raised.
    pub plateau_threshold: f64,
    pub plateau_steps: f64,
    /// Use the unnegated reward forms (improvement negative, cost positive).
    pub paper_literal_signs: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 5.0,
            delta_beta: 5.0,
            c_base: 0.2,
            l_eps: 1.0,
            ema_coeff: 0.95,
            plateau_threshold: 0.5,
            plateau_steps: 1e6,
            paper_literal_signs: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta_beta", self.delta_beta),
            ("l_eps", self.l_eps),
            ("plateau_threshold", self.plateau_threshold),
            ("plateau_steps", self.plateau_steps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.c_base >= 0.0) {
            return Err(Error::Config("c_base must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.ema_coeff) {
            return Err(Error::Config("ema_coeff must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Baseline-normalized improvement of the absolute error on one tick.
pub fn regression_reward(l_pred: f64, l_baseline: f64, l_eps: f64) -> f64 {
    (l_baseline - l_pred) / l_baseline.max(l_eps)
}

/// Pairwise ranking reward for tick `i` against an opposite-label partner.
pub fn classification_reward(p_i: f64, p_j: f64, y_i: f64) -> f64 {
    y_i * (p_i - p_j)
}

/// Draws, for every tick, a partner uniformly among the ticks of the
/// opposite label. `None` when only one class is present.
pub fn pair_assignments<R: Rng>(labels: &[f64], rng: &mut R) -> Option<Vec<usize>> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] > 0.0);
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    Some(
        labels
            .iter()
            .map(|&y| {
                let pool = if y > 0.0 { &neg } else { &pos };
                pool[rng.random_range(0..pool.len())]
            })
            .collect(),
    )
}

/// Divides by the batch mean absolute value; an all-zero batch is returned
/// unchanged.
pub fn normalize_pred_rewards(raw: &mut [f64]) {
    if raw.is_empty() {
        return;
    }
    let scale = raw.iter().map(|r| r.abs()).sum::<f64>() / raw.len() as f64;
    if scale > 0.0 {
        raw.iter_mut().for_each(|r| *r /= scale);
    }
}

/// Sigmoid gate on the training cost relative to the budget.
pub fn gate(c_train: f64, c_max: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + (alpha * (1.0 - c_train / c_max)).exp())
}

/// Cost penalty of one tick. `step_costs` are the per-feature charges of the
/// action; `C_base` applies once when anything was selected.
pub fn cost_reward(
    step_costs: &[f64],
    action: &[bool],
    beta: f64,
    gate_value: f64,
    c_base: f64,
) -> f64 {
    let total = step_costs.iter().sum::<f64>();
    cost_penalty(
        total,
        step_costs.len(),
        action.iter().any(|&a| a),
        beta,
        gate_value,
        c_base,
    )
}

/// [`cost_reward`] from the summed charge of a tick.
pub fn cost_penalty(
    total: f64,
    n_features: usize,
    any_fetch: bool,
    beta: f64,
    gate_value: f64,
    c_base: f64,
) -> f64 {
    let base = if any_fetch { c_base } else { 0.0 };
    -gate_value * (beta * total / n_features.max(1) as f64 + base)
}

/// Exponential smoothing of the training cost.
pub fn update_c_train(c_train: f64, batch_mean_cost: f64, ema_coeff: f64) -> f64 {
    ema_coeff * c_train + (1.0 - ema_coeff) * batch_mean_cost
}

/// Raises `beta` when the last three validation costs, recorded as
/// `(step, cost)`, decrease slower than the plateau threshold.
pub fn update_beta(window: &[(usize, f64)], beta: f64, cfg: &RewardConfig) -> f64 {
    match window {
        [(s0, c0), .., (s2, c2)] if window.len() >= 3 && s2 > s0 => {
            let rate = (c0 - c2) / (*s2 - *s0) as f64 * cfg.plateau_steps;
            if rate < cfg.plateau_threshold {
                (1.5 * beta).min(beta + cfg.delta_beta)
            } else {
                beta
            }
        }
        _ => beta,
    }
}

/// Mutable cost-schedule state: smoothed training cost and `beta` with its
/// validation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSchedule {
    pub c_train: Option<f64>,
    pub beta: f64,
    pub frozen: bool,
    window: Vec<(usize, f64)>,
}

impl CostSchedule {
    pub fn new(beta: f64, frozen: bool) -> Self {
        Self {
            c_train: None,
            beta,
            frozen,
            window: Vec::new(),
        }
    }

    /// Folds in a batch's mean cost; the first batch initializes the average.
    pub fn observe_batch(&mut self, batch_mean_cost: f64, ema_coeff: f64) -> f64 {
        let c = match self.c_train {
            None => batch_mean_cost,
            Some(c) => update_c_train(c, batch_mean_cost, ema_coeff),
        };
        self.c_train = Some(c);
        c
    }

    /// Records a validation cost; returns true when `beta` was raised. The
    /// window restarts after every raise. A cost already within `c_max` is
    /// never treated as a plateau.
    pub fn observe_validation(
        &mut self,
        step: usize,
        cost: f64,
        c_max: f64,
        cfg: &RewardConfig,
    ) -> bool {
        if self.frozen {
            return false;
        }
        self.window.push((step, cost));
        if self.window.len() > 3 {
            self.window.remove(0);
        }
        if self.window.len() < 3 || cost <= c_max {
            return false;
        }
        let next = update_beta(&self.window, self.beta, cfg);
        if next > self.beta {
            self.beta = next;
            self.window.clear();
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn regression_examples() {
        assert_eq!(regression_reward(2.0, 2.0, 1.0), 0.0);
        assert_eq!(regression_reward(30.0, 60.0, 1.0), 0.5);
        assert_eq!(regression_reward(0.5, 0.0, 1.0), -0.5);
    }

    #[test]
    fn classification_examples() {
        assert!((classification_reward(0.9, 0.2, 1.0) - 0.7).abs() < 1e-12);
        assert!((classification_reward(0.3, 0.8, -1.0) - 0.5).abs() < 1e-12);
        assert_eq!(classification_reward(0.4, 0.4, 1.0), 0.0);
    }

    #[test]
    fn pairs_cross_classes() {
        let y = [1.0, -1.0, -1.0, 1.0, -1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = pair_assignments(&y, &mut rng).unwrap();
        for (i, &j) in p.iter().enumerate() {
            assert_eq!(y[j], -y[i]);
        }
        assert!(pair_assignments(&[1.0, 1.0], &mut rng).is_none());
    }

    #[test]
    fn normalization_examples() {
        let mut a = [2.0, -2.0];
        normalize_pred_rewards(&mut a);
        assert_eq!(a, [1.0, -1.0]);
        let mut z = [0.0, 0.0];
        normalize_pred_rewards(&mut z);
        assert_eq!(z, [0.0, 0.0]);
        let mut b = [1.0, 3.0];
        normalize_pred_rewards(&mut b);
        assert_eq!(b, [0.5, 1.5]);
    }

    #[test]
    fn gate_examples() {
        assert_eq!(gate(7.0, 7.0, 10.0), 0.5);
        assert!((gate(2.0, 1.0, 10.0) - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-15);
        assert!((gate(2.0, 1.0, 10.0) - 0.99995).abs() < 1e-5);
        assert!((gate(0.0, 1.0, 10.0) - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn cost_reward_examples() {
        assert_eq!(
            cost_reward(&[0.0, 0.0], &[false, false], 5.0, 0.7, 0.2),
            0.0
        );
        // mean selected cost (0.8 + 0) / 2 = 0.4
        let r = cost_reward(&[0.8, 0.0], &[true, false], 5.0, 0.5, 0.2);
        assert!((r + 1.1).abs() < 1e-12);
        assert_eq!(cost_reward(&[3.0], &[true], 100.0, 0.0, 0.2), 0.0);
    }

    #[test]
    fn beta_examples() {
        let cfg = RewardConfig::default();
        let flat = [(0, 10.0), (1000, 10.0), (2000, 10.0)];
        assert_eq!(update_beta(&flat, 5.0, &cfg), 7.5);
        assert_eq!(update_beta(&flat, 20.0, &cfg), 25.0);
        let falling = [(0, 10.0), (1000, 9.0), (2000, 8.0)];
        assert_eq!(update_beta(&falling, 5.0, &cfg), 5.0);
    }

    #[test]
    fn c_train_examples() {
        assert_eq!(update_c_train(10.0, 0.0, 0.9), 9.0);
        assert_eq!(update_c_train(10.0, 3.0, 0.0), 3.0);
        let mut s = CostSchedule::new(5.0, false);
        assert_eq!(s.observe_batch(4.0, 0.9), 4.0);
        for _ in 0..500 {
            s.observe_batch(2.0, 0.9);
        }
        assert!((s.c_train.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_restarts_window_and_respects_freeze() {
        let cfg = RewardConfig::default();
        let mut s = CostSchedule::new(5.0, false);
        assert!(!s.observe_validation(0, 3.0, 1.0, &cfg));
        assert!(!s.observe_validation(10, 3.0, 1.0, &cfg));
        assert!(s.observe_validation(20, 3.0, 1.0, &cfg));
        assert_eq!(s.beta, 7.5);
        assert!(!s.observe_validation(30, 3.0, 1.0, &cfg));
        let mut f = CostSchedule::new(5.0, true);
        for i in 0..5 {
            f.observe_validation(i * 10, 3.0, 1.0, &cfg);
        }
        assert_eq!(f.beta, 5.0);
    }

    #[test]
    fn schedule_holds_beta_within_budget() {
        let cfg = RewardConfig::default();
        let mut s = CostSchedule::new(5.0, false);
        for i in 0..6 {
            assert!(!s.observe_validation(i * 10, 0.8, 1.0, &cfg));
        }
        assert_eq!(s.beta, 5.0);
        // The window keeps filling, so a rise over budget counts at once.
        assert!(s.observe_validation(60, 1.2, 1.0, &cfg));
    }

    proptest! {
        #[test]
        fn gate_is_increasing_and_bounded(a in 0.01f64..100.0, b in 0.01f64..100.0, c_max in 0.1f64..50.0, alpha in 0.1f64..20.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            let (g_lo, g_hi) = (gate(lo, c_max, alpha), gate(hi, c_max, alpha));
            prop_assert!(g_lo > 0.0 && g_hi < 1.0 + 1e-15);
            prop_assert!(g_lo <= g_hi);
        }

        #[test]
        fn normalization_is_scale_invariant(v in proptest::collection::vec(-10.0f64..10.0, 1..20), k in 0.01f64..100.0) {
            let mut a = v.clone();
            let mut b: Vec<f64> = v.iter().map(|x| x * k).collect();
            normalize_pred_rewards(&mut a);
            normalize_pred_rewards(&mut b);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn classification_symmetry(pi in 0.0f64..1.0, pj in 0.0f64..1.0) {
            prop_assert_eq!(classification_reward(pi, pj, 1.0), classification_reward(pj, pi, -1.0));
        }

        #[test]
        fn cost_reward_is_nonpositive(costs in proptest::collection::vec(0.0f64..10.0, 1..8), g in 0.0f64..1.0, beta in 0.0f64..50.0) {
            let action: Vec<bool> = costs.iter().map(|&c| c > 5.0).collect();
            let charged: Vec<f64> = costs.iter().zip(&action).map(|(&c, &a)| if a { c } else { 0.0 }).collect();
            prop_assert!(cost_reward(&charged, &action, beta, g, 0.2) <= 0.0);
        }

        #[test]
        fn beta_never_decreases(costs in proptest::collection::vec(0.0f64..20.0, 3..30)) {
            let cfg = RewardConfig::default();
            let mut s = CostSchedule::new(5.0, false);
            let mut last = s.beta;
            for (i, c) in costs.iter().enumerate() {
                s.observe_validation(i * 4096, *c, 1.0, &cfg);
                prop_assert!(s.beta >= last);
                last = s.beta;
            }
        }

        /// A pair earns positive reward exactly when it is ranked correctly.
        #[test]
        fn pair_reward_tracks_auroc(scores in proptest::collection::vec(0.0f64..1.0, 4..30), flips in proptest::collection::vec(any::<bool>(), 30)) {
            let y: Vec<f64> = scores.iter().zip(&flips).map(|(_, &f)| if f { 1.0 } else { -1.0 }).collect();
            let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
            let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] < 0.0).collect();
            prop_assume!(!pos.is_empty() && !neg.is_empty());
            let mut wins = 0.0;
            let mut diff = 0.0;
            for &i in &pos {
                for &j in &neg {
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                    diff += classification_reward(scores[i], scores[j], 1.0);
                }
            }
            let n = (pos.len() * neg.len()) as f64;
            // Sign agreement: pairwise reward is positive exactly for wins.
            let signed: f64 = pos.iter().flat_map(|&i| neg.iter().map(move |&j| (i, j)))
                .map(|(i, j)| {
                    let r = classification_reward(scores[i], scores[j], 1.0);
                    if r > 0.0 { 1.0 } else if r == 0.0 { 0.5 } else { 0.0 }
                })
                .sum();
            prop_assert!((signed / n - wins / n).abs() < 1e-12);
            prop_assert!(diff.is_finite());
        }
    }
}
