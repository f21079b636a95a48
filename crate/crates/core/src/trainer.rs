//! Pre-training, policy optimization, predictor retraining and evaluation.

use std::io::Write;
use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{episode_cost, CostMode, CostTracker};
use crate::data::{DatasetSplits, EpisodeData, FeatureSpec, Task};
use crate::env::{episode_rng, synthesize_states, AcquisitionEnv, AcquisitionPolicy, SynthMode};
use crate::eval::task_loss;
use crate::predictor::{fit_predictor, Predictor, PredictorConfig};
use crate::reward::{
    classification_reward, cost_penalty, gate, normalize_pred_rewards, pair_assignments,
    regression_reward, CostSchedule, RewardConfig,
};
use crate::rl::{
    ppo_update, sample_actions, Actor, Adam, Critic, PpoConfig, PpoStats, RolloutBuffer,
    RolloutEpisode,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub no_predictor_update: bool,
    pub no_baseline: bool,
    pub fixed_beta: bool,
    pub no_gate: bool,
    pub no_reward_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub c_max: f64,
    pub cost_mode: CostMode,
    /// PPO updates between validation-cost evaluations.
    pub eval_every: usize,
    pub reveal_current_tick: bool,
    pub flags: AblationFlags,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            c_max: f64::INFINITY,
            cost_mode: CostMode::Simple,
            eval_every: 1,
            reveal_current_tick: false,
            flags: AblationFlags::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_max > 0.0) {
            return Err(Error::Config("c_max must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        self.reward.validate()?;
        self.ppo.validate()
    }
}

/// Frozen pre-trained predictor and, for regression, its per-tick absolute
/// errors on fully observed training episodes.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub predictor: Predictor,
    pub baseline_train: Option<Vec<Vec<f64>>>,
    pub baseline_val: Option<Vec<Vec<f64>>>,
}

fn abs_errors(p: &Predictor, episodes: &[EpisodeData]) -> Result<Vec<Vec<f64>>> {
    episodes
        .par_iter()
        .map(|e| {
            let preds = p.predict_columns(e.x.columns())?;
            Ok(preds.iter().zip(&e.y).map(|(a, b)| (a - b).abs()).collect())
        })
        .collect()
}

pub fn pretrain_predictor(splits: &DatasetSplits, cfg: &PredictorConfig) -> Result<Pretrained> {
    let predictor = fit_predictor(&splits.train, &splits.val, splits.task, cfg)?;
    Pretrained::from_predictor(predictor, splits)
}

impl Pretrained {
    /// Wraps an already fitted predictor, filling the regression baseline
    /// cache from the fully observed train and validation splits.
    pub fn from_predictor(predictor: Predictor, splits: &DatasetSplits) -> Result<Self> {
        if predictor.n_features() != splits.n_features() {
            return Err(Error::Config(format!(
                "predictor expects {} features, data has {}",
                predictor.n_features(),
                splits.n_features()
            )));
        }
        let (baseline_train, baseline_val) = match splits.task {
            Task::Regression => (
                Some(abs_errors(&predictor, &splits.train)?),
                Some(abs_errors(&predictor, &splits.val)?),
            ),
            Task::Classification => (None, None),
        };
        Ok(Self {
            predictor,
            baseline_train,
            baseline_val,
        })
    }
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub update: usize,
    pub step: usize,
    pub episodes: usize,
    pub batch_cost: f64,
    pub c_train: f64,
    pub gate: f64,
    pub beta: f64,
    pub c_base: f64,
    pub reward_normalized: bool,
    pub baseline_reward: bool,
    pub mean_pred_reward: f64,
    pub mean_cost_reward: f64,
    pub mean_reward: f64,
    pub c_valid: Option<f64>,
    pub beta_raised: bool,
    #[serde(flatten)]
    pub ppo: PpoStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub actor: Actor,
    pub critic: Critic,
    pub history: Vec<HistoryRecord>,
    pub converged: bool,
    pub steps: usize,
    pub updates: usize,
    pub c_valid: f64,
    pub beta: f64,
}

/// Raw per-episode result of a sampled rollout, before rewards.
struct Collected {
    ep: RolloutEpisode,
    preds: Vec<f64>,
    step_costs: Vec<f64>,
    any_fetch: Vec<bool>,
    mean_cost: f64,
}

fn collect_episode(
    episode: &EpisodeData,
    actor: &Actor,
    critic: &Critic,
    predictor: &Predictor,
    specs: &[FeatureSpec],
    cfg: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Collected> {
    let n_f = episode.n_features();
    let n_t = episode.n_ticks();
    let mut env = AcquisitionEnv::reset(episode, cfg.reveal_current_tick);
    let mut memory = actor.begin();
    let mut tracker = CostTracker::new(specs, cfg.cost_mode);
    let mut probs = vec![0.0; n_f];
    let mut prev = vec![false; n_f];
    let mut act = vec![false; n_f];
    let mut charges = vec![0.0; n_f];
    let mut ep = RolloutEpisode {
        inputs: Vec::with_capacity(n_t * 2 * n_f),
        actions: Vec::with_capacity(n_t * n_f),
        log_probs: Vec::with_capacity(n_t),
        ..Default::default()
    };
    let mut step_costs = Vec::with_capacity(n_t);
    let mut any_fetch = Vec::with_capacity(n_t);
    while !env.done() {
        let obs = env.observation();
        ep.inputs.extend_from_slice(obs);
        ep.inputs
            .extend(prev.iter().map(|&a| f64::from(u8::from(a))));
        actor.probs(&mut memory, obs, &prev, &mut probs);
        let lp = sample_actions(&probs, rng, &mut act);
        ep.log_probs.push(lp);
        ep.actions.extend_from_slice(&act);
        let total = tracker.charge(&act, &mut charges);
        step_costs.push(total);
        any_fetch.push(act.iter().any(|&a| a));
        env.step(&act)?;
        std::mem::swap(&mut prev, &mut act);
    }
    let state = env.into_state();
    let preds = predictor.predict_columns(state.columns().skip(1))?;
    let (values, _) = critic.values(ep.observations(n_f));
    ep.values = values;
    let mean_cost = step_costs.iter().sum::<f64>() / n_t as f64;
    Ok(Collected {
        ep,
        preds,
        step_costs,
        any_fetch,
        mean_cost,
    })
}

/// Mean over episodes of the per-tick cost under deterministic actions.
pub fn split_cost<P>(
    policy: &P,
    episodes: &[EpisodeData],
    specs: &[FeatureSpec],
    mode: CostMode,
    reveal: bool,
) -> Result<f64>
where
    P: AcquisitionPolicy + Sync,
{
    if episodes.is_empty() {
        return Ok(0.0);
    }
    let rollouts = synthesize_states(episodes, policy, SynthMode::Deterministic, 0, reveal)?;
    let mut total = 0.0;
    for r in &rollouts {
        total += episode_cost(&r.actions, specs, mode)?.mean_per_tick;
    }
    Ok(total / rollouts.len() as f64)
}

/// Draws training episodes without replacement, reshuffling on exhaustion.
struct EpisodeSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpisodeSampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Optimizes the acquisition policy against the frozen pre-trained
/// predictor until the validation cost meets `c_max` (after `min_steps`) or
/// `max_steps` is reached. `on_record` sees every history record as it is
/// produced.
pub fn train_policy(
    splits: &DatasetSplits,
    pre: &Pretrained,
    cfg: &PolicyConfig,
    mut on_record: impl FnMut(&HistoryRecord),
) -> Result<PolicyOutcome> {
    cfg.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Data(
            "policy training needs train and validation episodes".into(),
        ));
    }
    let n_f = splits.n_features();
    let ppo = &cfg.ppo;
    let flags = cfg.flags;
    let c_base = if flags.fixed_beta {
        0.0
    } else {
        cfg.reward.c_base
    };
    let mut actor = Actor::new(n_f, ppo.hidden, ppo.init_prob, ppo.seed);
    let mut critic = Critic::new(n_f, ppo.hidden, ppo.seed.wrapping_add(1));
    let mut actor_opt = Adam::new(actor.net.params.len(), ppo.lr, ppo.adam_eps);
    let mut critic_opt = Adam::new(critic.net.params.len(), ppo.lr, ppo.adam_eps);
    let mut schedule = CostSchedule::new(cfg.reward.beta, flags.fixed_beta);
    let mut sampler = EpisodeSampler::new(splits.train.len(), ppo.seed ^ 0x5eed);
    let mut update_rng = ChaCha8Rng::seed_from_u64(ppo.seed.wrapping_add(2));
    let mut history = Vec::new();
    let mut steps = 0usize;
    let mut updates = 0usize;
    let mut c_valid = f64::INFINITY;
    let mut converged = false;
    let baseline = if flags.no_baseline {
        None
    } else {
        pre.baseline_train.as_ref()
    };

    while steps < ppo.max_steps {
        // Rollout.
        let mut picks = Vec::new();
        let mut ticks = 0;
        while ticks < ppo.rollout_ticks {
            let i = sampler.next();
            ticks += splits.train[i].n_ticks();
            picks.push(i);
        }
        let rollout_seed = ppo
            .seed
            .wrapping_mul(0x9e37_79b9)
            .wrapping_add(updates as u64);
        let collected: Vec<Collected> = picks
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let mut rng = episode_rng(rollout_seed, slot);
                collect_episode(
                    &splits.train[i],
                    &actor,
                    &critic,
                    &pre.predictor,
                    &splits.specs,
                    cfg,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;

        // Cost tracking and gate.
        let batch_cost =
            collected.iter().map(|c| c.mean_cost).sum::<f64>() / collected.len() as f64;
        let c_train = schedule.observe_batch(batch_cost, cfg.reward.ema_coeff);
        let g = if flags.no_gate {
            1.0
        } else {
            gate(c_train, cfg.c_max, cfg.reward.alpha)
        };

        // Prediction rewards over the whole batch.
        let mut pred_r: Vec<f64> = Vec::with_capacity(ticks);
        match splits.task {
            Task::Regression => {
                for (c, &i) in collected.iter().zip(&picks) {
                    let y = &splits.train[i].y;
                    for (t, (p, yt)) in c.preds.iter().zip(y).enumerate() {
                        let l = (p - yt).abs();
                        pred_r.push(match baseline {
                            Some(b) => regression_reward(l, b[i][t], cfg.reward.l_eps),
                            None => -l,
                        });
                    }
                }
            }
            Task::Classification => {
                let labels: Vec<f64> = picks
                    .iter()
                    .flat_map(|&i| splits.train[i].y.iter().copied())
                    .collect();
                let preds: Vec<f64> = collected
                    .iter()
                    .flat_map(|c| c.preds.iter().copied())
                    .collect();
                match pair_assignments(&labels, &mut update_rng) {
                    Some(partner) => pred_r
                        .extend((0..labels.len()).map(|t| {
                            classification_reward(preds[t], preds[partner[t]], labels[t])
                        })),
                    None => {
                        warn!("rollout batch holds a single class; prediction rewards set to zero");
                        pred_r.resize(labels.len(), 0.0);
                    }
                }
            }
        }
        if !flags.no_reward_norm {
            normalize_pred_rewards(&mut pred_r);
        }

        // Total rewards.
        let sign = if cfg.reward.paper_literal_signs {
            -1.0
        } else {
            1.0
        };
        let mut buffer = RolloutBuffer::new(n_f);
        let (mut sum_pred, mut sum_cost) = (0.0, 0.0);
        let mut cursor = 0;
        for c in collected {
            let mut ep = c.ep;
            ep.rewards = (0..ep.len())
                .map(|t| {
                    let pr = pred_r[cursor + t];
                    let cr = cost_penalty(
                        c.step_costs[t],
                        n_f,
                        c.any_fetch[t],
                        schedule.beta,
                        g,
                        c_base,
                    );
                    sum_pred += pr;
                    sum_cost += cr;
                    sign * (pr + cr)
                })
                .collect();
            cursor += ep.len();
            buffer.episodes.push(ep);
        }
        buffer.compute_advantages(ppo.gamma, ppo.lambda);
        let stats = ppo_update(
            &buffer,
            &mut actor,
            &mut critic,
            &mut actor_opt,
            &mut critic_opt,
            ppo,
            &mut update_rng,
        )?;
        steps += ticks;
        updates += 1;

        // Validation and schedule.
        let mut record_valid = None;
        let mut raised = false;
        if updates % cfg.eval_every == 0 || steps >= ppo.max_steps {
            c_valid = split_cost(
                &actor,
                &splits.val,
                &splits.specs,
                cfg.cost_mode,
                cfg.reveal_current_tick,
            )?;
            raised = schedule.observe_validation(steps, c_valid, cfg.c_max, &cfg.reward);
            record_valid = Some(c_valid);
            if raised {
                info!("beta raised to {}", schedule.beta);
            }
        }
        let n = ticks as f64;
        let record = HistoryRecord {
            update: updates,
            step: steps,
            episodes: picks.len(),
            batch_cost,
            c_train,
            gate: g,
            beta: schedule.beta,
            c_base,
            reward_normalized: !flags.no_reward_norm,
            baseline_reward: baseline.is_some(),
            mean_pred_reward: sum_pred / n,
            mean_cost_reward: sum_cost / n,
            mean_reward: (sum_pred + sum_cost) / n,
            c_valid: record_valid,
            beta_raised: raised,
            ppo: stats,
        };
        debug!(
            "update {updates}: step {steps} cost {batch_cost:.3} c_valid {record_valid:?} beta {}",
            schedule.beta
        );
        on_record(&record);
        history.push(record);
        if record_valid.is_some() && c_valid <= cfg.c_max && steps >= ppo.min_steps {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(
            "policy did not reach c_max {} within {} steps (c_valid {c_valid})",
            cfg.c_max, ppo.max_steps
        );
    }
    Ok(PolicyOutcome {
        actor,
        critic,
        history,
        converged,
        steps,
        updates,
        c_valid,
        beta: schedule.beta,
    })
}

/// How masked states are synthesized for retraining and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RolloutSpec {
    pub mode: SynthMode,
    /// Base seed for sampled actions; each episode draws from its own stream.
    pub seed: u64,
    pub reveal_current_tick: bool,
}

impl RolloutSpec {
    pub fn deterministic() -> Self {
        Self::default()
    }

    pub fn sampled(seed: u64) -> Self {
        Self {
            mode: SynthMode::Sample,
            seed,
            reveal_current_tick: false,
        }
    }

    /// Same settings with an independent sampling seed.
    pub fn salted(self, salt: u64) -> Self {
        Self {
            seed: derive_seed(self.seed, salt),
            ..self
        }
    }

    fn synthesize<P: AcquisitionPolicy + Sync>(
        &self,
        episodes: &[EpisodeData],
        policy: &P,
    ) -> Result<Vec<crate::env::Rollout>> {
        synthesize_states(
            episodes,
            policy,
            self.mode,
            self.seed,
            self.reveal_current_tick,
        )
    }
}

/// Refits a fresh predictor on masked training states produced by the
/// policy under `rollouts`.
pub fn retrain_predictor<P>(
    splits: &DatasetSplits,
    policy: &P,
    pre: &Predictor,
    cfg: &PredictorConfig,
    flags: AblationFlags,
    rollouts: RolloutSpec,
) -> Result<Predictor>
where
    P: AcquisitionPolicy + Sync,
{
    if flags.no_predictor_update {
        return Ok(pre.clone());
    }
    let mask = |eps: &[EpisodeData], rs: RolloutSpec| -> Result<Vec<EpisodeData>> {
        let r = rs.synthesize(eps, policy)?;
        Ok(r.iter()
            .zip(eps)
            .map(|(r, e)| r.masked_episode(e))
            .collect())
    };
    fit_predictor(
        &mask(&splits.train, rollouts.salted(1))?,
        &mask(&splits.val, rollouts.salted(2))?,
        splits.task,
        cfg,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    /// Mean per-tick acquisition cost.
    pub cost: f64,
    /// MAE, or 1 - AUROC for classification.
    pub loss: f64,
}

/// Cost and loss of `policy` + `predictor` on masked states.
pub fn evaluate<P>(
    policy: &P,
    predictor: &Predictor,
    episodes: &[EpisodeData],
    specs: &[FeatureSpec],
    task: Task,
    mode: CostMode,
    rollouts: RolloutSpec,
) -> Result<SplitMetrics>
where
    P: AcquisitionPolicy + Sync,
{
    if episodes.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let per: Vec<(f64, Vec<f64>)> = rollouts
        .synthesize(episodes, policy)?
        .par_iter()
        .map(|r| {
            let cost = episode_cost(&r.actions, specs, mode)?.mean_per_tick;
            Ok((cost, predictor.predict_columns(r.predictor_inputs())?))
        })
        .collect::<Result<_>>()?;
    let cost = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let preds: Vec<f64> = per.into_iter().flat_map(|p| p.1).collect();
    let labels: Vec<f64> = episodes.iter().flat_map(|e| e.y.iter().copied()).collect();
    Ok(SplitMetrics {
        cost,
        loss: task_loss(task, &preds, &labels)?,
    })
}

/// Loss of a predictor on fully observed inputs.
pub fn full_observation_loss(
    predictor: &Predictor,
    episodes: &[EpisodeData],
    task: Task,
) -> Result<f64> {
    let preds: Vec<Vec<f64>> = episodes
        .par_iter()
        .map(|e| predictor.predict_columns(e.x.columns()))
        .collect::<Result<_>>()?;
    let labels: Vec<f64> = episodes.iter().flat_map(|e| e.y.iter().copied()).collect();
    task_loss(task, &preds.concat(), &labels)
}

pub const POLICY_FORMAT: &str = "dynafs-policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format: String,
    pub version: u32,
    pub n_features: usize,
    pub actor: Actor,
    pub critic: Critic,
}

impl PolicyFile {
    pub fn new(actor: Actor, critic: Critic) -> Self {
        Self {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            n_features: actor.n_features(),
            actor,
            critic,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: PolicyFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if f.format != POLICY_FORMAT
            || f.version != POLICY_VERSION
            || f.actor.n_features() != f.n_features
        {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("unsupported policy container {} v{}", f.format, f.version),
            });
        }
        Ok(f)
    }
}

/// Writes history records as JSON lines.
pub fn write_history(records: &[HistoryRecord], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Seed-derived helper used when a sub-component needs its own stream.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.rotate_left(17));
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub task: Task,
    /// `None` for an unbounded budget.
    pub c_max: Option<f64>,
    pub converged: bool,
    pub steps: usize,
    pub updates: usize,
    pub final_beta: f64,
    pub final_c_valid: f64,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
    /// Test metrics of the policy with the pre-trained predictor.
    pub test_pretrained_predictor: SplitMetrics,
    /// Pre-trained predictor on fully observed test inputs, at the cost of
    /// fetching everything.
    pub test_full_observation: SplitMetrics,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub splits: DatasetSplits,
    pub pretrained: Pretrained,
    pub policy: PolicyOutcome,
    pub predictor: Predictor,
    pub activation: crate::eval::ActivationMap,
    pub metrics: RunMetrics,
}

/// Pre-training, policy optimization, retraining and test evaluation. When
/// `out_dir` is given, writes `metrics.json`, `history.jsonl`,
/// `predictor_pretrained.json`, `predictor.json`, `policy.json` and
/// `activation.csv` there.
pub fn run_pipeline(cfg: &crate::config::RunConfig, out_dir: Option<&Path>) -> Result<RunResult> {
    cfg.validate()?;
    let splits = cfg.load_splits().map_err(|e| e.in_stage("data"))?;
    run_pipeline_on(cfg, splits, out_dir)
}

/// [`run_pipeline`] on already prepared splits.
pub fn run_pipeline_on(
    cfg: &crate::config::RunConfig,
    splits: DatasetSplits,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    let pcfg = cfg.predictor_config();
    let policy_cfg = cfg.policy();
    let reveal = cfg.reveal_current_tick;
    let rollouts = cfg.rollout_spec();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let pre = pretrain_predictor(&splits, &pcfg).map_err(|e| e.in_stage("pretrain"))?;
    info!("pre-trained predictor ready");

    let mut history_file = match out_dir {
        Some(dir) => Some(std::io::BufWriter::new(std::fs::File::create(
            dir.join("history.jsonl"),
        )?)),
        None => None,
    };
    let mut write_err = None;
    let outcome = train_policy(&splits, &pre, &policy_cfg, |r| {
        if let Some(w) = history_file.as_mut() {
            let res = serde_json::to_writer(&mut *w, r)
                .map_err(Error::from)
                .and_then(|_| writeln!(w).map_err(Error::from));
            if let Err(e) = res {
                write_err.get_or_insert(e);
            }
        }
    })
    .map_err(|e| e.in_stage("policy"))?;
    if let Some(e) = write_err {
        return Err(e.in_stage("policy"));
    }
    if let Some(mut w) = history_file {
        w.flush()?;
    }

    let predictor = retrain_predictor(
        &splits,
        &outcome.actor,
        &pre.predictor,
        &pcfg,
        cfg.flags(),
        rollouts,
    )
    .map_err(|e| e.in_stage("retrain"))?;

    let eval = |pred: &Predictor, eps: &[EpisodeData], salt: u64| {
        evaluate(
            &outcome.actor,
            pred,
            eps,
            &splits.specs,
            splits.task,
            cfg.cost_mode,
            rollouts.salted(salt),
        )
    };
    // Both test evaluations share one salt so they see identical masks.
    let (train, val, test, test_pre) = (|| -> Result<_> {
        Ok((
            eval(&predictor, &splits.train, 3)?,
            eval(&predictor, &splits.val, 4)?,
            eval(&predictor, &splits.test, 5)?,
            eval(&pre.predictor, &splits.test, 5)?,
        ))
    })()
    .map_err(|e| e.in_stage("evaluate"))?;
    let all = crate::env::ConstantPolicy {
        n_features: splits.n_features(),
        prob: 1.0,
    };
    let full = SplitMetrics {
        cost: split_cost(&all, &splits.test, &splits.specs, cfg.cost_mode, reveal)?,
        loss: full_observation_loss(&pre.predictor, &splits.test, splits.task)
            .map_err(|e| e.in_stage("evaluate"))?,
    };
    let names: Vec<String> = splits.specs.iter().map(|s| s.name.clone()).collect();
    let activation = crate::eval::activation_map(
        &outcome.actor,
        &splits.test,
        &names,
        cfg.t_max,
        cfg.activation_mode,
        derive_seed(cfg.seed, 6),
        cfg.activation_rollouts,
    )
    .map_err(|e| e.in_stage("evaluate"))?;

    let metrics = RunMetrics {
        seed: cfg.seed,
        task: splits.task,
        c_max: cfg.c_max.is_finite().then_some(cfg.c_max),
        converged: outcome.converged,
        steps: outcome.steps,
        updates: outcome.updates,
        final_beta: outcome.beta,
        final_c_valid: outcome.c_valid,
        train,
        val,
        test,
        test_pretrained_predictor: test_pre,
        test_full_observation: full,
    };
    if let Some(dir) = out_dir {
        let write = || -> Result<()> {
            std::fs::write(
                dir.join("metrics.json"),
                serde_json::to_string_pretty(&metrics)? + "\n",
            )?;
            pre.predictor.save(&dir.join("predictor_pretrained.json"))?;
            predictor.save(&dir.join("predictor.json"))?;
            PolicyFile::new(outcome.actor.clone(), outcome.critic.clone())
                .save(&dir.join("policy.json"))?;
            activation.write_csv(&dir.join("activation.csv"))?;
            Ok(())
        };
        write().map_err(|e| e.in_stage("write"))?;
    }
    Ok(RunResult {
        splits,
        pretrained: pre,
        policy: outcome,
        predictor,
        activation,
        metrics,
    })
}
