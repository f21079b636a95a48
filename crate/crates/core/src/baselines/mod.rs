//! Static feature-selection baselines: rank features once, pick a fixed
//! subset under the budget, and train a predictor that only ever sees that
//! subset.

mod importance;
mod select;

pub use importance::{
    alpha_grid, l1_svm, lasso_cd, lasso_cv, permutation_importance, Gram, L1SvmConfig, LassoConfig,
    LassoFit,
};
pub use select::{expected_tick_costs, select_knapsack, select_topk, SubsetSelection};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CostMode;
use crate::data::{DatasetSplits, EpisodeData, FeatureSpec, Task};
use crate::env::{synthesize_states, SubsetPolicy, SynthMode};
use crate::predictor::{class_weights, fit_predictor, Predictor, PredictorConfig};
use crate::trainer::{evaluate, RolloutSpec, SplitMetrics};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    #[default]
    Permutation,
    Lasso,
    L1Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    #[default]
    Topk,
    Knapsack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub method: ImportanceMethod,
    pub scores: Vec<f64>,
}

/// Row-major tick-level design matrix and labels over episodes.
pub fn design_matrix(episodes: &[EpisodeData]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for e in episodes {
        x.extend_from_slice(e.x.as_slice());
        y.extend_from_slice(&e.y);
    }
    (x, y)
}

/// Scores every feature with `method`. Permutation importance uses the
/// pre-trained predictor on the validation split; the linear methods fit on
/// the training split.
pub fn compute_importance(
    method: ImportanceMethod,
    splits: &DatasetSplits,
    pretrained: &Predictor,
    seed: u64,
) -> Result<ImportanceVector> {
    let n_f = splits.n_features();
    let scores = match method {
        ImportanceMethod::Permutation => {
            permutation_importance(pretrained, &splits.val, splits.task, 3, seed)?
        }
        ImportanceMethod::Lasso => {
            let (x, y) = design_matrix(&splits.train);
            let fit = lasso_cv(
                &x,
                n_f,
                &y,
                &LassoConfig {
                    seed,
                    ..Default::default()
                },
            )?;
            fit.coef.iter().map(|c| c.abs()).collect()
        }
        ImportanceMethod::L1Logistic => {
            if splits.task != Task::Classification {
                return Err(Error::Config(
                    "l1_logistic importance needs a classification task".into(),
                ));
            }
            let (x, y) = design_matrix(&splits.train);
            let w = class_weights(&y)?;
            let (coef, _) = l1_svm(&x, n_f, &y, Some(w), &L1SvmConfig::default())?;
            coef.iter().map(|c| c.abs()).collect()
        }
    };
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Model(format!(
            "{method:?} importance produced non-finite scores"
        )));
    }
    Ok(ImportanceVector { method, scores })
}

pub fn select_subset(
    rule: SelectionRule,
    importance: &[f64],
    specs: &[FeatureSpec],
    mode: CostMode,
    mean_len: f64,
    c_max: f64,
) -> SubsetSelection {
    let costs = expected_tick_costs(specs, mode, mean_len);
    match rule {
        SelectionRule::Topk => select_topk(importance, &costs, c_max),
        SelectionRule::Knapsack if c_max.is_finite() => select_knapsack(importance, &costs, c_max),
        SelectionRule::Knapsack => select_topk(importance, &costs, c_max),
    }
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub selection: SubsetSelection,
    pub predictor: Predictor,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
}

/// Trains a predictor that sees only the subset (the rest stays at the fill
/// value) and evaluates it like the main pipeline.
pub fn train_baseline(
    selection: SubsetSelection,
    splits: &DatasetSplits,
    cfg: &PredictorConfig,
    mode: CostMode,
) -> Result<BaselineResult> {
    let policy = SubsetPolicy {
        mask: selection.selected.clone(),
    };
    let mask = |eps: &[EpisodeData]| -> Result<Vec<EpisodeData>> {
        let r = synthesize_states(eps, &policy, SynthMode::Deterministic, 0, false)?;
        Ok(r.iter()
            .zip(eps)
            .map(|(r, e)| r.masked_episode(e))
            .collect())
    };
    let predictor = fit_predictor(&mask(&splits.train)?, &mask(&splits.val)?, splits.task, cfg)?;
    let val = evaluate(
        &policy,
        &predictor,
        &splits.val,
        &splits.specs,
        splits.task,
        mode,
        RolloutSpec::deterministic(),
    )?;
    let test = evaluate(
        &policy,
        &predictor,
        &splits.test,
        &splits.specs,
        splits.task,
        mode,
        RolloutSpec::deterministic(),
    )?;
    Ok(BaselineResult {
        selection,
        predictor,
        val,
        test,
    })
}

/// `feature,score,selected,cost` rows.
pub fn write_selection_csv(
    path: &Path,
    specs: &[FeatureSpec],
    importance: &ImportanceVector,
    selection: &SubsetSelection,
    costs: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature", "score", "selected", "cost"])?;
    for (k, s) in specs.iter().enumerate() {
        w.write_record([
            s.name.clone(),
            importance.scores[k].to_string(),
            u8::from(selection.selected[k]).to_string(),
            costs[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
