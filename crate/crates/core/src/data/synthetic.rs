//! Planted-relevance synthetic cohorts.
//!
//! Dynamic features are independent AR(1) processes, static features are one
//! draw per subject, and the label is a fixed sparse linear function of the
//! informative features plus noise. With `relevance_switch` the informative
//! set changes halfway through every sequence: the first set carries signal
//! (and is zero otherwise) before the midpoint, a disjoint second set after.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, EpisodeData, FeatureKind, FeatureSpec, Task};
use crate::matrix::FeatureMatrix;
use crate::{Error, Result};

/// Observation costs assigned round-robin to synthetic features.
const OBS_COST_LEVELS: [f64; 5] = [1.0, 2.0, 3.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub n_features: usize,
    pub n_informative: usize,
    pub n_static: usize,
    pub tick_range: (usize, usize),
    pub ar_coeff: f64,
    pub noise_std: f64,
    pub task: Task,
    /// Fraction of positive ticks for classification.
    pub positive_rate: f64,
    pub relevance_switch: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_subjects: 500,
            n_features: 16,
            n_informative: 4,
            n_static: 2,
            tick_range: (20, 40),
            ar_coeff: 0.9,
            noise_std: 0.45,
            task: Task::Regression,
            positive_rate: 0.5,
            relevance_switch: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_informative == 0 {
            return fail("n_informative must be at least 1 (no learnable signal otherwise)");
        }
        if self.n_informative > self.n_features {
            return fail("n_informative exceeds n_features");
        }
        if self.n_static >= self.n_features {
            return fail("n_static must be smaller than n_features");
        }
        if self.relevance_switch && 2 * self.n_informative > self.n_features - self.n_static {
            return fail("relevance_switch needs 2 * n_informative dynamic features");
        }
        let (lo, hi) = self.tick_range;
        if lo < 2 || lo > hi {
            return fail("tick_range must satisfy 2 <= min <= max");
        }
        if !(self.ar_coeff > 0.0 && self.ar_coeff < 1.0) {
            return fail("ar_coeff must lie in (0, 1)");
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return fail("noise_std must be positive");
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return fail("positive_rate must lie in (0, 1)");
        }
        if self.n_subjects == 0 {
            return fail("n_subjects must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Features the label depends on at some tick.
    pub relevance: Vec<bool>,
    /// Label weight of every feature (zero for noise features).
    pub weights: Vec<f64>,
    /// With `relevance_switch`: (first-half set, second-half set).
    pub phases: Option<(Vec<bool>, Vec<bool>)>,
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_f = config.n_features;
    let n_dynamic = n_f - config.n_static;

    let specs: Vec<FeatureSpec> = (0..n_f)
        .map(|k| {
            let kind = if k >= n_dynamic {
                FeatureKind::Static
            } else {
                FeatureKind::Dynamic
            };
            FeatureSpec::new(
                format!("f{k:02}"),
                kind,
                OBS_COST_LEVELS[k % OBS_COST_LEVELS.len()],
            )
        })
        .collect::<Result<_>>()?;

    let mut candidates: Vec<usize> = if config.relevance_switch {
        (0..n_dynamic).collect()
    } else {
        (0..n_f).collect()
    };
    candidates.shuffle(&mut rng);
    let n_inf = config.n_informative;
    let rank_weight = |r: usize| 2.0 * (n_inf - r) as f64 / n_inf as f64;

    let mut weights = vec![0.0; n_f];
    let mut first = vec![false; n_f];
    let mut second = vec![false; n_f];
    for (r, &k) in candidates[..n_inf].iter().enumerate() {
        weights[k] = rank_weight(r);
        first[k] = true;
    }
    if config.relevance_switch {
        for (r, &k) in candidates[n_inf..2 * n_inf].iter().enumerate() {
            weights[k] = rank_weight(r);
            second[k] = true;
        }
    }
    let relevance: Vec<bool> = (0..n_f).map(|k| first[k] || second[k]).collect();

    let innovation = Normal::new(0.0, config.noise_std).expect("validated noise_std");
    let (lo, hi) = config.tick_range;
    let mut episodes = Vec::with_capacity(config.n_subjects);
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(config.n_subjects);
    for i in 0..config.n_subjects {
        let n_t = rng.random_range(lo..=hi);
        let half = n_t / 2;
        let mut x = FeatureMatrix::zeros(n_f, n_t);
        for k in 0..n_f {
            if specs[k].kind == FeatureKind::Static {
                let v: f64 = StandardNormal.sample(&mut rng);
                for t in 0..n_t {
                    x.set(k, t, v);
                }
                continue;
            }
            let (start, end) = if config.relevance_switch && first[k] {
                (0, half)
            } else if config.relevance_switch && second[k] {
                (half, n_t)
            } else {
                (0, n_t)
            };
            let mut v: f64 = StandardNormal.sample(&mut rng);
            for t in start..end {
                if t > start {
                    v = config.ar_coeff * v + innovation.sample(&mut rng);
                }
                x.set(k, t, v);
            }
        }
        let score: Vec<f64> = (0..n_t)
            .map(|t| {
                let signal: f64 = (0..n_f).map(|k| weights[k] * x.get(k, t)).sum();
                signal + innovation.sample(&mut rng)
            })
            .collect();
        scores.push(score);
        episodes.push(EpisodeData {
            subject_id: format!("S{i:05}"),
            x,
            y: Vec::new(),
        });
    }

    match config.task {
        Task::Regression => {
            for (e, s) in episodes.iter_mut().zip(scores) {
                e.y = s;
            }
        }
        Task::Classification => {
            let mut pooled: Vec<f64> = scores.iter().flatten().copied().collect();
            pooled.sort_by(f64::total_cmp);
            let idx = ((1.0 - config.positive_rate) * pooled.len() as f64) as usize;
            let threshold = pooled[idx.min(pooled.len() - 1)];
            for (e, s) in episodes.iter_mut().zip(scores) {
                e.y = s
                    .iter()
                    .map(|&v| if v > threshold { 1.0 } else { -1.0 })
                    .collect();
            }
        }
    }

    let phases = config.relevance_switch.then(|| (first, second));
    Ok(SyntheticData {
        dataset: Dataset {
            task: config.task,
            specs,
            episodes,
        },
        relevance,
        weights,
        phases,
    })
}
