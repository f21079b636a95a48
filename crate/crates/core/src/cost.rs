//! Acquisition costs under the simple and complex settings.
//!
//! A dynamic feature is charged every time it is fetched. A static feature is
//! charged only on its first fetch within an episode.

use serde::{Deserialize, Serialize};

use crate::data::{grid_len_for, FeatureKind, FeatureSpec, RawSubject};
use crate::matrix::ActionMatrix;
use crate::{Error, Result};

/// Share of sequences with exactly one observation above which a feature is
/// treated as static.
pub const STATIC_SHARE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    #[default]
    Simple,
    Complex,
}

impl FeatureSpec {
    /// Cost of one fetch of this feature under `mode`, before the static
    /// first-fetch rule.
    #[inline]
    pub fn fetch_cost(&self, mode: CostMode) -> f64 {
        match mode {
            CostMode::Simple => self.unit_cost,
            CostMode::Complex => self.per_tick_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_tick: Vec<f64>,
    pub total: f64,
    pub mean_per_tick: f64,
}

/// Per-feature costs `c_{k,t}` of `action_t`, given the actions at ticks
/// before `t` in `history`.
pub fn step_cost_vector(
    action_t: &[bool],
    history: &ActionMatrix,
    t: usize,
    specs: &[FeatureSpec],
    mode: CostMode,
) -> Result<Vec<f64>> {
    let n_f = specs.len();
    if action_t.len() != n_f || history.n_features() != n_f || t > history.n_ticks() {
        return Err(Error::Shape(format!(
            "action of length {} against {} specs and history {}x{} at tick {t}",
            action_t.len(),
            n_f,
            history.n_features(),
            history.n_ticks()
        )));
    }
    let fetched_before: Vec<bool> = (0..n_f)
        .map(|k| (0..t).any(|s| history.get(k, s)))
        .collect();
    let mut out = vec![0.0; n_f];
    charge(action_t, &fetched_before, specs, mode, &mut out);
    Ok(out)
}

#[inline]
fn charge(
    action: &[bool],
    fetched_before: &[bool],
    specs: &[FeatureSpec],
    mode: CostMode,
    out: &mut [f64],
) {
    for k in 0..specs.len() {
        out[k] = if !action[k] {
            0.0
        } else {
            match specs[k].kind {
                FeatureKind::Dynamic => specs[k].fetch_cost(mode),
                FeatureKind::Static if fetched_before[k] => 0.0,
                FeatureKind::Static => specs[k].fetch_cost(mode),
            }
        };
    }
}

/// Incremental form of [`step_cost_vector`] for rollouts: remembers which
/// features were already fetched in the current episode.
#[derive(Debug, Clone)]
pub struct CostTracker<'a> {
    specs: &'a [FeatureSpec],
    mode: CostMode,
    fetched: Vec<bool>,
}

impl<'a> CostTracker<'a> {
    pub fn new(specs: &'a [FeatureSpec], mode: CostMode) -> Self {
        Self {
            specs,
            mode,
            fetched: vec![false; specs.len()],
        }
    }

    /// Charges `action` and records it; writes per-feature costs into `out`
    /// and returns their sum.
    pub fn charge(&mut self, action: &[bool], out: &mut [f64]) -> f64 {
        charge(action, &self.fetched, self.specs, self.mode, out);
        for (f, &a) in self.fetched.iter_mut().zip(action) {
            *f |= a;
        }
        out.iter().sum()
    }
}

pub fn episode_cost(
    actions: &ActionMatrix,
    specs: &[FeatureSpec],
    mode: CostMode,
) -> Result<CostReport> {
    if actions.n_features() != specs.len() {
        return Err(Error::Shape(format!(
            "{} action rows against {} specs",
            actions.n_features(),
            specs.len()
        )));
    }
    let mut tracker = CostTracker::new(specs, mode);
    let mut buf = vec![0.0; specs.len()];
    let per_tick: Vec<f64> = (0..actions.n_ticks())
        .map(|t| tracker.charge(actions.col(t), &mut buf))
        .collect();
    let total: f64 = per_tick.iter().sum();
    let mean_per_tick = if per_tick.is_empty() {
        0.0
    } else {
        total / per_tick.len() as f64
    };
    Ok(CostReport {
        per_tick,
        total,
        mean_per_tick,
    })
}

/// Re-derives feature kinds and per-tick costs from observation frequencies.
///
/// A feature is static when it has exactly one observation in more than 90%
/// of the sequences that observe it; its per-tick cost is its observation
/// cost. A dynamic feature is charged `obs_cost * mean observations per
/// sequence / mean sequence length in ticks`, capped at `obs_cost`.
pub fn derive_per_tick_costs(
    subjects: &[RawSubject],
    specs: &[FeatureSpec],
    tick_hours: f64,
) -> Result<Vec<FeatureSpec>> {
    if subjects.is_empty() {
        return Err(Error::Data(
            "no subjects to estimate observation rates from".into(),
        ));
    }
    let mean_len = subjects
        .iter()
        .map(|s| {
            s.time_span()
                .map_or(1, |(lo, hi)| grid_len_for(hi - lo, tick_hours)) as f64
        })
        .sum::<f64>()
        / subjects.len() as f64;

    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let counts: Vec<usize> = subjects.iter().map(|s| s.streams[k].len()).collect();
            let observed = counts.iter().filter(|&&c| c > 0).count();
            if observed == 0 {
                return Err(Error::Data(format!(
                    "feature `{}` is never observed",
                    spec.name
                )));
            }
            let single = counts.iter().filter(|&&c| c == 1).count();
            let mut out = spec.clone();
            if single as f64 > STATIC_SHARE * observed as f64 {
                if spec.kind != FeatureKind::Static {
                    log::info!("feature `{}` reclassified as static", spec.name);
                }
                out.kind = FeatureKind::Static;
                out.per_tick_cost = spec.obs_cost;
            } else {
                if spec.kind != FeatureKind::Dynamic {
                    log::info!("feature `{}` reclassified as dynamic", spec.name);
                }
                out.kind = FeatureKind::Dynamic;
                let mean_obs = counts.iter().sum::<usize>() as f64 / subjects.len() as f64;
                out.per_tick_cost = (spec.obs_cost * mean_obs / mean_len).min(spec.obs_cost);
            }
            out.validate()?;
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dyn_spec(cost: f64) -> FeatureSpec {
        FeatureSpec::new("d", FeatureKind::Dynamic, cost).unwrap()
    }

    fn static_spec(cost: f64) -> FeatureSpec {
        FeatureSpec::new("s", FeatureKind::Static, cost).unwrap()
    }

    #[test]
    fn static_charged_on_first_fetch_only() {
        let specs = [static_spec(1.0)];
        let mut a = ActionMatrix::new(1, 4);
        a.set(0, 1, true);
        a.set(0, 3, true);
        let first = step_cost_vector(a.col(1), &a, 1, &specs, CostMode::Simple).unwrap();
        let second = step_cost_vector(a.col(3), &a, 3, &specs, CostMode::Simple).unwrap();
        assert_eq!((first[0], second[0]), (1.0, 0.0));
    }

    #[test]
    fn dynamic_charged_every_fetch() {
        let specs = [dyn_spec(4.0)];
        let mut a = ActionMatrix::new(1, 3);
        a.set(0, 0, true);
        a.set(0, 2, true);
        let r = episode_cost(&a, &specs, CostMode::Simple).unwrap();
        assert_eq!(r.per_tick, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_action_costs_nothing() {
        let specs = [dyn_spec(1.0), static_spec(2.0)];
        let a = ActionMatrix::new(2, 3);
        assert_eq!(
            step_cost_vector(&[false, false], &a, 1, &specs, CostMode::Complex).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = ActionMatrix::new(2, 3);
        assert!(step_cost_vector(&[true], &a, 0, &[dyn_spec(1.0)], CostMode::Simple).is_err());
    }

    #[test]
    fn episode_totals() {
        let two = [dyn_spec(1.0), dyn_spec(1.0)];
        let r = episode_cost(&ActionMatrix::filled(2, 10, true), &two, CostMode::Simple).unwrap();
        assert_eq!((r.total, r.mean_per_tick), (20.0, 2.0));

        let one_static = [static_spec(1.0)];
        let r = episode_cost(
            &ActionMatrix::filled(1, 10, true),
            &one_static,
            CostMode::Simple,
        )
        .unwrap();
        assert_eq!(r.total, 1.0);
        assert!((r.mean_per_tick - 0.1).abs() < 1e-15);

        let mut cheap = dyn_spec(1.0);
        cheap.per_tick_cost = 0.3;
        let mut a = ActionMatrix::new(1, 10);
        for t in [0, 3, 5, 9] {
            a.set(0, t, true);
        }
        let r = episode_cost(&a, &[cheap], CostMode::Complex).unwrap();
        assert!((r.total - 1.2).abs() < 1e-12);
    }

    fn subject(counts: &[(usize, f64)]) -> RawSubject {
        // Each stream: `n` events spread over `span` hours.
        let span = counts.iter().map(|c| c.1).fold(0.0, f64::max);
        RawSubject {
            subject_id: "x".into(),
            streams: counts
                .iter()
                .map(|&(n, _)| {
                    (0..n)
                        .map(|i| (i as f64 * span / n.max(1) as f64, 0.0))
                        .collect()
                })
                .collect(),
            label: vec![(0.0, 0.0), (span, 0.0)],
        }
    }

    #[test]
    fn per_tick_cost_from_frequency() {
        // 39.5 h at 0.5 h ticks = 80 ticks; 4 observations => one per 20 ticks.
        let subjects: Vec<RawSubject> = (0..5).map(|_| subject(&[(4, 39.5), (80, 39.5)])).collect();
        let specs = [dyn_spec(10.0), dyn_spec(3.0)];
        let out = derive_per_tick_costs(&subjects, &specs, 0.5).unwrap();
        assert!((out[0].per_tick_cost - 0.5).abs() < 1e-12);
        assert!((out[1].per_tick_cost - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_observation_features_become_static() {
        let subjects: Vec<RawSubject> = (0..10).map(|_| subject(&[(1, 10.0), (5, 10.0)])).collect();
        let out =
            derive_per_tick_costs(&subjects, &[static_spec(2.0), dyn_spec(1.0)], 0.5).unwrap();
        assert_eq!(out[0].kind, FeatureKind::Static);
        assert_eq!(out[0].per_tick_cost, 2.0);
        assert_eq!(out[1].kind, FeatureKind::Dynamic);
    }

    #[test]
    fn never_observed_feature_rejected() {
        let subjects = vec![subject(&[(0, 4.0), (3, 4.0)])];
        assert!(derive_per_tick_costs(&subjects, &[dyn_spec(1.0), dyn_spec(1.0)], 0.5).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (Vec<FeatureSpec>, ActionMatrix)> {
        (1usize..5, 1usize..12).prop_flat_map(|(n_f, n_t)| {
            (
                proptest::collection::vec((any::<bool>(), 0.0f64..5.0), n_f),
                proptest::collection::vec(any::<bool>(), n_f * n_t),
            )
                .prop_map(move |(kinds, acts)| {
                    let specs = kinds
                        .into_iter()
                        .map(|(st, c)| {
                            let kind = if st {
                                FeatureKind::Static
                            } else {
                                FeatureKind::Dynamic
                            };
                            FeatureSpec::new("f", kind, c).unwrap()
                        })
                        .collect();
                    let cols: Vec<Vec<bool>> = acts.chunks(n_f).map(<[bool]>::to_vec).collect();
                    (specs, ActionMatrix::from_columns(n_f, &cols))
                })
        })
    }

    proptest! {
        #[test]
        fn adding_a_fetch_never_lowers_cost((specs, a) in arb_case(), k in 0usize..5, t in 0usize..12, complex in any::<bool>()) {
            let mode = if complex { CostMode::Complex } else { CostMode::Simple };
            let k = k % a.n_features();
            let t = t % a.n_ticks();
            let before = episode_cost(&a, &specs, mode).unwrap().total;
            let mut b = a.clone();
            b.set(k, t, true);
            let after = episode_cost(&b, &specs, mode).unwrap().total;
            prop_assert!(after >= before - 1e-12);
        }

        #[test]
        fn static_feature_charged_at_most_once((specs, a) in arb_case()) {
            let r = episode_cost(&a, &specs, CostMode::Simple).unwrap();
            let mut tracker = CostTracker::new(&specs, CostMode::Simple);
            let mut buf = vec![0.0; specs.len()];
            let mut per_feature = vec![0.0; specs.len()];
            for t in 0..a.n_ticks() {
                tracker.charge(a.col(t), &mut buf);
                for k in 0..specs.len() { per_feature[k] += buf[k]; }
            }
            for (k, s) in specs.iter().enumerate() {
                if s.kind == FeatureKind::Static {
                    prop_assert!(per_feature[k] <= s.unit_cost);
                }
            }
            prop_assert!((per_feature.iter().sum::<f64>() - r.total).abs() < 1e-9);
            prop_assert!((r.mean_per_tick * a.n_ticks() as f64 - r.total).abs() < 1e-9);
        }

        #[test]
        fn unit_costs_make_modes_agree((specs, a) in arb_case()) {
            let specs: Vec<FeatureSpec> = specs.into_iter().map(|s| FeatureSpec::new("f", FeatureKind::Dynamic, 1.0 + 0.0 * s.obs_cost).unwrap()).collect();
            let s = episode_cost(&a, &specs, CostMode::Simple).unwrap().total;
            let c = episode_cost(&a, &specs, CostMode::Complex).unwrap().total;
            prop_assert_eq!(s, c);
        }
    }
}
