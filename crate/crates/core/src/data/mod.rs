//! Datasets: feature annotations, episodes, splits and their producers.

mod ingest;
mod prep;
mod synthetic;

pub use ingest::{ingest_csv, read_schema, RawCohort, RawSubject};
pub use prep::{
    grid_len as grid_len_for, interpolate_to_ticks, normalize, split, FeatureNorm, NormStats,
    DEFAULT_FRACTIONS,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

use serde::{Deserialize, Serialize};

use crate::matrix::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Regression,
    Classification,
}

/// Per-feature kind and cost parameters for both cost settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Cost of one acquisition under the simple setting.
    pub unit_cost: f64,
    /// Cost of one real-world observation (complex setting).
    pub obs_cost: f64,
    /// Equivalent cost of fetching the feature at one tick (complex setting).
    pub per_tick_cost: f64,
}

impl FeatureSpec {
    /// A spec whose per-tick cost equals its observation cost, which is
    /// exact for static features and for dynamic features observed at every
    /// tick.
    pub fn new(name: impl Into<String>, kind: FeatureKind, obs_cost: f64) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            kind,
            unit_cost: 1.0,
            obs_cost,
            per_tick_cost: obs_cost,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let costs = [self.unit_cost, self.obs_cost, self.per_tick_cost];
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Data(format!(
                "feature `{}`: costs must be finite and non-negative",
                self.name
            )));
        }
        if self.per_tick_cost > self.obs_cost + 1e-12 {
            return Err(Error::Data(format!(
                "feature `{}`: per-tick cost {} exceeds observation cost {}",
                self.name, self.per_tick_cost, self.obs_cost
            )));
        }
        if self.kind == FeatureKind::Static && (self.per_tick_cost - self.obs_cost).abs() > 1e-12 {
            return Err(Error::Data(format!(
                "static feature `{}` must have per-tick cost equal to observation cost",
                self.name
            )));
        }
        Ok(())
    }
}

/// One subject's full feature matrix and per-tick labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeData {
    pub subject_id: String,
    /// `N_F x N_T`.
    pub x: FeatureMatrix,
    /// Length `N_T`; `-1/+1` for classification.
    pub y: Vec<f64>,
}

impl EpisodeData {
    pub fn n_features(&self) -> usize {
        self.x.n_features()
    }

    pub fn n_ticks(&self) -> usize {
        self.x.n_ticks()
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        if self.y.len() != self.x.n_ticks() {
            return Err(Error::Shape(format!(
                "subject {}: {} labels for {} ticks",
                self.subject_id,
                self.y.len(),
                self.x.n_ticks()
            )));
        }
        if self.x.n_ticks() < 2 {
            return Err(Error::Data(format!(
                "subject {}: sequences need at least 2 ticks",
                self.subject_id
            )));
        }
        if self.x.has_nan() || self.y.iter().any(|v| v.is_nan()) {
            return Err(Error::Data(format!(
                "subject {}: NaN values",
                self.subject_id
            )));
        }
        if task == Task::Classification && self.y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Data(format!(
                "subject {}: classification labels must be -1 or +1",
                self.subject_id
            )));
        }
        Ok(())
    }
}

/// A cohort with its feature annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: Task,
    pub specs: Vec<FeatureSpec>,
    pub episodes: Vec<EpisodeData>,
}

impl Dataset {
    pub fn n_features(&self) -> usize {
        self.specs.len()
    }
}

/// Subject-disjoint train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub task: Task,
    pub specs: Vec<FeatureSpec>,
    pub train: Vec<EpisodeData>,
    pub val: Vec<EpisodeData>,
    pub test: Vec<EpisodeData>,
    /// Filled in by [`normalize`].
    pub norm_stats: Option<NormStats>,
}

impl DatasetSplits {
    pub fn n_features(&self) -> usize {
        self.specs.len()
    }

    /// Mean sequence length of the training split, in ticks.
    pub fn mean_train_len(&self) -> f64 {
        if self.train.is_empty() {
            return 0.0;
        }
        self.train.iter().map(|e| e.n_ticks() as f64).sum::<f64>() / self.train.len() as f64
    }

    /// Copy of the splits with every feature outside `keep` dropped.
    pub fn select_features(&self, keep: &[usize]) -> Self {
        let project = |eps: &[EpisodeData]| {
            eps.iter()
                .map(|e| EpisodeData {
                    subject_id: e.subject_id.clone(),
                    x: e.x.select_rows(keep),
                    y: e.y.clone(),
                })
                .collect()
        };
        Self {
            task: self.task,
            specs: keep.iter().map(|&k| self.specs[k].clone()).collect(),
            train: project(&self.train),
            val: project(&self.val),
            test: project(&self.test),
            norm_stats: self.norm_stats.clone(),
        }
    }
}
