//! Label predictors consuming (masked) per-tick states.
//!
//! Tree and linear predictors see only the current state column; the
//! recurrent predictor sees the whole prefix. All of them map a sequence of
//! input columns to one prediction per column: a regression value or the
//! positive-class probability.

mod gbdt;
mod linear;
mod recurrent;

pub use gbdt::{
    fit_gbdt, fit_gbdt_ensemble, GbdtConfig, GbdtEnsemble, GbdtModel, GbdtTask, Node, Samples, Tree,
};
pub use linear::{fit_logistic, fit_ols, LinearModel, Link};
pub use recurrent::{fit_recurrent, scheduled_lr, EpochStats, RecurrentConfig, RecurrentPredictor};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{EpisodeData, Task};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_neg: f64,
    pub w_pos: f64,
}

/// Weights each class by the opposite class's share:
/// `[w_neg, w_pos] = [N_pos, N_neg] / (N_pos + N_neg)`.
pub fn class_weights(labels: &[f64]) -> Result<ClassWeights> {
    let n_pos = labels.iter().filter(|&&v| v > 0.0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Data("class weights need both classes".into()));
    }
    Ok(ClassWeights {
        w_neg: n_pos / (n_pos + n_neg),
        w_pos: n_neg / (n_pos + n_neg),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    #[default]
    Gbdt,
    Recurrent,
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub gbdt: GbdtConfig,
    pub recurrent: RecurrentConfig,
    /// Apply opposite-proportion class weights in classification.
    pub balance_classes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Predictor {
    Gbdt(GbdtEnsemble),
    Recurrent(RecurrentPredictor),
    Linear(LinearModel),
}

impl Predictor {
    pub fn n_features(&self) -> usize {
        match self {
            Predictor::Gbdt(m) => m.n_features(),
            Predictor::Recurrent(m) => m.n_features(),
            Predictor::Linear(m) => m.coef.len(),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Predictor::Gbdt(m) => match m.task() {
                GbdtTask::Regression => Task::Regression,
                GbdtTask::Binary => Task::Classification,
            },
            Predictor::Recurrent(m) => m.task,
            Predictor::Linear(m) => match m.link {
                Link::Identity => Task::Regression,
                Link::Logistic => Task::Classification,
            },
        }
    }

    /// One prediction per input column.
    pub fn predict_columns<'a, I>(&self, columns: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        match self {
            Predictor::Gbdt(m) => columns.into_iter().map(|c| m.predict(c)).collect(),
            Predictor::Linear(m) => columns.into_iter().map(|c| m.predict(c)).collect(),
            Predictor::Recurrent(m) => {
                let cols: Vec<&[f64]> = columns.into_iter().collect();
                if cols.iter().any(|c| c.iter().any(|v| v.is_nan())) {
                    return Err(Error::Model("NaN in predictor input".into()));
                }
                Ok(m.predict_sequence(cols))
            }
        }
    }

    /// Whether the predictor can depend on feature `k` at all. Only trees
    /// can prove a feature unused.
    pub fn may_use_feature(&self, k: usize) -> bool {
        match self {
            Predictor::Gbdt(m) => m.uses_feature(k),
            Predictor::Linear(m) => m.coef[k] != 0.0,
            Predictor::Recurrent(_) => true,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            task: self.task(),
            n_features: self.n_features(),
            predictor: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!(
                    "unsupported model container {} v{}",
                    file.format, file.version
                ),
            });
        }
        if file.n_features != file.predictor.n_features() || file.task != file.predictor.task() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "model header does not match its parameters".into(),
            });
        }
        Ok(file.predictor)
    }
}

pub const MODEL_FORMAT: &str = "dynafs-predictor";
pub const MODEL_VERSION: u32 = 1;

/// Self-describing JSON container for a trained predictor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub task: Task,
    pub n_features: usize,
    pub predictor: Predictor,
}

/// Flattens per-tick samples (inputs are the columns of each episode's `x`).
fn flatten(episodes: &[EpisodeData]) -> (Vec<f64>, Vec<f64>, usize) {
    let n_f = episodes.first().map_or(0, EpisodeData::n_features);
    let ticks: usize = episodes.iter().map(EpisodeData::n_ticks).sum();
    let mut x = Vec::with_capacity(ticks * n_f);
    let mut y = Vec::with_capacity(ticks);
    for e in episodes {
        x.extend_from_slice(e.x.as_slice());
        y.extend_from_slice(&e.y);
    }
    (x, y, n_f)
}

/// Trains a predictor on episodes whose `x` holds the predictor inputs
/// (full features for pre-training, masked states for retraining).
pub fn fit_predictor(
    train: &[EpisodeData],
    val: &[EpisodeData],
    task: Task,
    cfg: &PredictorConfig,
) -> Result<Predictor> {
    if train.is_empty() {
        return Err(Error::Data(
            "cannot fit a predictor without training data".into(),
        ));
    }
    let (x, y, n_f) = flatten(train);
    let weights = match (task, cfg.balance_classes) {
        (Task::Classification, true) => Some(class_weights(&y)?),
        _ => None,
    };
    match (cfg.kind, task) {
        (PredictorKind::Gbdt, _) => {
            let (gtask, labels) = match task {
                Task::Regression => (GbdtTask::Regression, y),
                Task::Classification => (
                    GbdtTask::Binary,
                    y.iter().map(|&v| f64::from(v > 0.0)).collect(),
                ),
            };
            let sw: Option<Vec<f64>> = weights.map(|w| {
                labels
                    .iter()
                    .map(|&v| if v > 0.5 { w.w_pos } else { w.w_neg })
                    .collect()
            });
            let samples = Samples {
                x: &x,
                n_features: n_f,
                y: &labels,
                weights: sw.as_deref(),
            };
            let mut gcfg = cfg.gbdt.clone();
            if task == Task::Classification && gcfg.l2 == 0.0 {
                gcfg.l2 = 1.0;
            }
            Ok(Predictor::Gbdt(fit_gbdt_ensemble(&samples, gtask, &gcfg)?))
        }
        (PredictorKind::Recurrent, _) => {
            let (m, _) = fit_recurrent(train, val, task, &cfg.recurrent, weights)?;
            Ok(Predictor::Recurrent(m))
        }
        (PredictorKind::Linear, Task::Regression) => Ok(Predictor::Linear(fit_ols(&x, n_f, &y)?)),
        (PredictorKind::Logistic, Task::Classification)
        | (PredictorKind::Linear, Task::Classification) => {
            let labels: Vec<f64> = y.iter().map(|&v| f64::from(v > 0.0)).collect();
            let w = match weights {
                Some(w) => w,
                None => class_weights(&y).unwrap_or(ClassWeights {
                    w_neg: 0.5,
                    w_pos: 0.5,
                }),
            };
            Ok(Predictor::Linear(fit_logistic(
                &x, n_f, &labels, w, 100, 1e-4,
            )?))
        }
        (PredictorKind::Logistic, Task::Regression) => Err(Error::Config(
            "logistic predictor requires a classification task".into(),
        )),
    }
}
