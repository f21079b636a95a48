//! Flat key-value run configuration (TOML without tables).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::{derive_per_tick_costs, CostMode};
use crate::data::{
    generate_synthetic, ingest_csv, interpolate_to_ticks, normalize, split, Dataset, DatasetSplits,
    SyntheticConfig, Task,
};
use crate::env::SynthMode;
use crate::predictor::{GbdtConfig, PredictorConfig, PredictorKind, RecurrentConfig};
use crate::reward::RewardConfig;
use crate::rl::PpoConfig;
use crate::trainer::{derive_seed, AblationFlags, PolicyConfig, RolloutSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,

    // data
    pub data_source: DataSource,
    pub task: Task,
    pub events_path: Option<PathBuf>,
    pub schema_path: Option<PathBuf>,
    pub label_feature: Option<String>,
    pub tick_hours: f64,
    /// Re-derive per-tick costs and feature kinds from observation rates.
    pub derive_costs: bool,
    pub n_subjects: usize,
    pub n_features: usize,
    pub n_informative: usize,
    pub n_static: usize,
    pub min_ticks: usize,
    pub max_ticks: usize,
    pub ar_coeff: f64,
    pub noise_std: f64,
    pub positive_rate: f64,
    pub relevance_switch: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,

    // predictor
    pub predictor: PredictorKind,
    pub n_trees: usize,
    pub max_depth: usize,
    pub gbdt_learning_rate: f64,
    pub min_samples_leaf: usize,
    pub max_bins: usize,
    pub l2: f64,
    pub n_models: usize,
    pub subsample: f64,
    pub rnn_hidden: usize,
    pub rnn_epochs: usize,
    pub rnn_lr: f64,
    pub rnn_batch_episodes: usize,
    pub balance_classes: bool,

    // cost and policy
    pub cost_mode: CostMode,
    pub c_max: f64,
    pub eval_every: usize,
    pub reveal_current_tick: bool,
    pub alpha: f64,
    pub beta: f64,
    pub delta_beta: f64,
    pub c_base: f64,
    pub l_eps: f64,
    pub ema_coeff: f64,
    pub plateau_threshold: f64,
    pub plateau_steps: f64,
    pub paper_literal_signs: bool,
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub adam_eps: f64,
    pub epochs_per_batch: usize,
    pub minibatches: usize,
    pub grad_clip: f64,
    pub hidden: usize,
    pub init_prob: f64,
    pub rollout_ticks: usize,
    pub min_steps: usize,
    pub max_steps: usize,

    // ablations
    pub no_predictor_update: bool,
    pub no_baseline: bool,
    pub fixed_beta: bool,
    pub no_gate: bool,
    pub no_reward_norm: bool,

    // outputs
    pub t_max: usize,
    pub activation_rollouts: usize,
    pub activation_mode: SynthMode,
    /// Action mode for retraining data and split metrics.
    pub eval_mode: SynthMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        let gb = GbdtConfig::default();
        let rnn = RecurrentConfig::default();
        let rw = RewardConfig::default();
        let ppo = PpoConfig::default();
        Self {
            seed: 0,
            out_dir: None,
            data_source: DataSource::Synthetic,
            task: Task::Regression,
            events_path: None,
            schema_path: None,
            label_feature: None,
            tick_hours: 0.5,
            derive_costs: false,
            n_subjects: syn.n_subjects,
            n_features: syn.n_features,
            n_informative: syn.n_informative,
            n_static: syn.n_static,
            min_ticks: syn.tick_range.0,
            max_ticks: syn.tick_range.1,
            ar_coeff: syn.ar_coeff,
            noise_std: syn.noise_std,
            positive_rate: syn.positive_rate,
            relevance_switch: false,
            train_frac: 0.68,
            val_frac: 0.12,
            test_frac: 0.20,
            predictor: PredictorKind::Gbdt,
            n_trees: gb.n_trees,
            max_depth: gb.max_depth,
            gbdt_learning_rate: gb.learning_rate,
            min_samples_leaf: gb.min_samples_leaf,
            max_bins: gb.max_bins,
            l2: gb.l2,
            n_models: gb.n_models,
            subsample: gb.subsample,
            rnn_hidden: rnn.hidden,
            rnn_epochs: rnn.epochs,
            rnn_lr: rnn.lr,
            rnn_batch_episodes: rnn.batch_episodes,
            balance_classes: true,
            cost_mode: CostMode::Simple,
            c_max: f64::INFINITY,
            eval_every: 1,
            reveal_current_tick: false,
            alpha: rw.alpha,
            beta: rw.beta,
            delta_beta: rw.delta_beta,
            c_base: rw.c_base,
            l_eps: rw.l_eps,
            ema_coeff: rw.ema_coeff,
            plateau_threshold: rw.plateau_threshold,
            plateau_steps: rw.plateau_steps,
            paper_literal_signs: false,
            gamma: ppo.gamma,
            lambda: ppo.lambda,
            clip_eps: ppo.clip_eps,
            lr: ppo.lr,
            adam_eps: ppo.adam_eps,
            epochs_per_batch: ppo.epochs_per_batch,
            minibatches: ppo.minibatches,
            grad_clip: ppo.grad_clip,
            hidden: ppo.hidden,
            init_prob: ppo.init_prob,
            rollout_ticks: ppo.rollout_ticks,
            min_steps: ppo.min_steps,
            max_steps: ppo.max_steps,
            no_predictor_update: false,
            no_baseline: false,
            fixed_beta: false,
            no_gate: false,
            no_reward_norm: false,
            t_max: 40,
            activation_rollouts: 1,
            activation_mode: SynthMode::Sample,
            eval_mode: SynthMode::Sample,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_source == DataSource::Csv
            && (self.events_path.is_none() || self.schema_path.is_none())
        {
            return Err(Error::Config(
                "csv data source needs events_path and schema_path".into(),
            ));
        }
        if self.data_source == DataSource::Csv && self.label_feature.is_none() {
            return Err(Error::Config("csv data source needs label_feature".into()));
        }
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if self.data_source == DataSource::Synthetic {
            self.synthetic().validate()?;
        }
        self.policy().validate()
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_subjects: self.n_subjects,
            n_features: self.n_features,
            n_informative: self.n_informative,
            n_static: self.n_static,
            tick_range: (self.min_ticks, self.max_ticks),
            ar_coeff: self.ar_coeff,
            noise_std: self.noise_std,
            task: self.task,
            positive_rate: self.positive_rate,
            relevance_switch: self.relevance_switch,
            seed: derive_seed(self.seed, 1),
        }
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            kind: self.predictor,
            gbdt: GbdtConfig {
                n_trees: self.n_trees,
                max_depth: self.max_depth,
                learning_rate: self.gbdt_learning_rate,
                min_samples_leaf: self.min_samples_leaf,
                max_bins: self.max_bins,
                l2: self.l2,
                n_models: self.n_models,
                subsample: self.subsample,
                seed: derive_seed(self.seed, 3),
            },
            recurrent: RecurrentConfig {
                hidden: self.rnn_hidden,
                epochs: self.rnn_epochs,
                lr: self.rnn_lr,
                batch_episodes: self.rnn_batch_episodes,
                grad_clip: 1.0,
                seed: derive_seed(self.seed, 4),
            },
            balance_classes: self.balance_classes,
        }
    }

    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            no_predictor_update: self.no_predictor_update,
            no_baseline: self.no_baseline,
            fixed_beta: self.fixed_beta,
            no_gate: self.no_gate,
            no_reward_norm: self.no_reward_norm,
        }
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            c_max: self.c_max,
            cost_mode: self.cost_mode,
            eval_every: self.eval_every,
            reveal_current_tick: self.reveal_current_tick,
            flags: self.flags(),
            reward: RewardConfig {
                alpha: self.alpha,
                beta: self.beta,
                delta_beta: self.delta_beta,
                c_base: self.c_base,
                l_eps: self.l_eps,
                ema_coeff: self.ema_coeff,
                plateau_threshold: self.plateau_threshold,
                plateau_steps: self.plateau_steps,
                paper_literal_signs: self.paper_literal_signs,
            },
            ppo: PpoConfig {
                gamma: self.gamma,
                lambda: self.lambda,
                clip_eps: self.clip_eps,
                lr: self.lr,
                adam_eps: self.adam_eps,
                epochs_per_batch: self.epochs_per_batch,
                minibatches: self.minibatches,
                grad_clip: self.grad_clip,
                hidden: self.hidden,
                init_prob: self.init_prob,
                rollout_ticks: self.rollout_ticks,
                min_steps: self.min_steps,
                max_steps: self.max_steps,
                seed: derive_seed(self.seed, 5),
            },
        }
    }

    /// Rollout settings for retraining and evaluation.
    pub fn rollout_spec(&self) -> RolloutSpec {
        RolloutSpec {
            mode: self.eval_mode,
            seed: derive_seed(self.seed, 7),
            reveal_current_tick: self.reveal_current_tick,
        }
    }

    /// Builds the raw dataset named by the config.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.data_source {
            DataSource::Synthetic => Ok(generate_synthetic(&self.synthetic())?.dataset),
            DataSource::Csv => {
                let events = self.events_path.as_deref().expect("validated");
                let schema = self.schema_path.as_deref().expect("validated");
                let mut cohort = ingest_csv(events, schema, self.label_feature.as_deref())?;
                if self.derive_costs {
                    cohort.specs =
                        derive_per_tick_costs(&cohort.subjects, &cohort.specs, self.tick_hours)?;
                }
                let episodes = cohort
                    .subjects
                    .iter()
                    .map(|s| interpolate_to_ticks(s, self.tick_hours, self.task))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Dataset {
                    task: self.task,
                    specs: cohort.specs,
                    episodes,
                })
            }
        }
    }

    /// Dataset, split and train-normalized.
    pub fn load_splits(&self) -> Result<DatasetSplits> {
        let data = self.load_dataset()?;
        for e in &data.episodes {
            e.validate(self.task)?;
        }
        let splits = split(
            data,
            (self.train_frac, self.val_frac, self.test_frac),
            derive_seed(self.seed, 2),
        )?;
        normalize(&splits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig {
            c_max: 4.0,
            ..Default::default()
        };
        let text = cfg.to_toml_string();
        assert!(!text.contains('['), "config must stay flat:\n{text}");
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\nc_max = 3.5\nfixed_beta = true\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(cfg.policy().flags.fixed_beta);
        assert_eq!(cfg.n_features, 16);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for bad in [
            "c_max = -1.0",
            "gamma = 1.5",
            "unknown_key = 1",
            "n_informative = 0",
            "data_source = \"csv\"",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn infinite_budget_is_expressible() {
        let cfg = RunConfig::from_toml_str("c_max = inf").unwrap();
        assert!(cfg.c_max.is_infinite());
    }
}
