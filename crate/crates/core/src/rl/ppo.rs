use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gae, joint_log_prob, Actor, Adam, Critic};
use crate::nn::clip_global_norm;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
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
    /// Ticks collected per rollout batch.
    pub rollout_ticks: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            lambda: 0.95,
            clip_eps: 0.2,
            lr: 1e-3,
            adam_eps: 1e-5,
            epochs_per_batch: 5,
            minibatches: 2,
            grad_clip: 0.5,
            hidden: 64,
            init_prob: 0.8,
            rollout_ticks: 4096,
            min_steps: 20_000,
            max_steps: 200_000,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Config("gamma and lambda must lie in (0, 1]".into()));
        }
        if !(self.clip_eps > 0.0)
            || !(self.lr > 0.0)
            || !(self.adam_eps > 0.0)
            || !(self.grad_clip > 0.0)
        {
            return Err(Error::Config(
                "clip_eps, lr, adam_eps and grad_clip must be positive".into(),
            ));
        }
        if !(self.init_prob > 0.0 && self.init_prob < 1.0) {
            return Err(Error::Config("init_prob must lie in (0, 1)".into()));
        }
        if self.epochs_per_batch == 0
            || self.minibatches == 0
            || self.hidden == 0
            || self.rollout_ticks == 0
        {
            return Err(Error::Config(
                "epochs, minibatches, hidden and rollout_ticks must be positive".into(),
            ));
        }
        if self.min_steps > self.max_steps {
            return Err(Error::Config("min_steps exceeds max_steps".into()));
        }
        Ok(())
    }
}

/// One recorded episode. `inputs` holds the actor inputs (`T x 2N_F`); the
/// first `N_F` entries of each row are the observation the critic sees.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutEpisode {
    pub inputs: Vec<f64>,
    pub actions: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutEpisode {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn observations(&self, n_features: usize) -> impl Iterator<Item = &[f64]> {
        self.inputs
            .chunks_exact(2 * n_features)
            .map(move |r| &r[..n_features])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub n_features: usize,
    pub episodes: Vec<RolloutEpisode>,
}

impl RolloutBuffer {
    pub fn new(n_features: usize) -> Self {
        Self {
            n_features,
            episodes: Vec::new(),
        }
    }

    pub fn total_ticks(&self) -> usize {
        self.episodes.iter().map(RolloutEpisode::len).sum()
    }

    /// Fills advantages and returns from rewards and values.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        for e in &mut self.episodes {
            let mut terminal = vec![false; e.len()];
            if let Some(last) = terminal.last_mut() {
                *last = true;
            }
            let (adv, ret) = gae(&e.rewards, &e.values, &terminal, gamma, lambda);
            e.advantages = adv;
            e.returns = ret;
        }
    }
}

/// `min(rho A, clip(rho, 1 - eps, 1 + eps) A)` and its derivative in `rho`.
/// The derivative vanishes whenever the clipped branch is the minimum,
/// including exactly at the clip boundary.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> (f64, f64) {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    let value = (ratio * adv).min(clipped * adv);
    let active = (adv >= 0.0 && ratio < 1.0 + eps) || (adv < 0.0 && ratio > 1.0 - eps);
    (value, if active { adv } else { 0.0 })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

/// Splits episode indices into `k` groups of roughly equal tick counts.
fn minibatches<R: Rng>(buffer: &RolloutBuffer, k: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..buffer.episodes.len()).collect();
    order.shuffle(rng);
    let k = k.min(order.len()).max(1);
    let per = buffer.total_ticks() as f64 / k as f64;
    let mut groups = vec![Vec::new(); k];
    let mut acc = 0usize;
    for i in order {
        let g = ((acc as f64 / per) as usize).min(k - 1);
        groups[g].push(i);
        acc += buffer.episodes[i].len();
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// Clipped-surrogate actor update and squared-error critic update over
/// `epochs_per_batch` passes. Advantages are used as recorded.
pub fn ppo_update<R: Rng>(
    buffer: &RolloutBuffer,
    actor: &mut Actor,
    critic: &mut Critic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    let n_f = buffer.n_features;
    let mut stats = PpoStats::default();
    let mut n_batches = 0.0;
    for _ in 0..cfg.epochs_per_batch {
        for group in minibatches(buffer, cfg.minibatches, rng) {
            let ticks: usize = group.iter().map(|&i| buffer.episodes[i].len()).sum();
            let inv = 1.0 / ticks as f64;
            let mut ga = vec![0.0; actor.net.params.len()];
            let mut gc = vec![0.0; critic.net.params.len()];
            let (mut a_loss, mut c_loss, mut clipped, mut kl) = (0.0, 0.0, 0.0, 0.0);
            for &i in &group {
                let e = &buffer.episodes[i];
                let (probs, tape) = actor.sequence_probs(&e.inputs);
                let mut w = Vec::with_capacity(e.len());
                for t in 0..e.len() {
                    let lp = joint_log_prob(
                        &probs[t * n_f..(t + 1) * n_f],
                        &e.actions[t * n_f..(t + 1) * n_f],
                    );
                    let log_ratio = lp - e.log_probs[t];
                    let ratio = log_ratio.exp();
                    if !ratio.is_finite() {
                        return Err(Error::Divergence(format!(
                            "policy ratio {ratio} at tick {t} (log-prob {lp}, recorded {})",
                            e.log_probs[t]
                        )));
                    }
                    let (surr, d_ratio) = clipped_surrogate(ratio, e.advantages[t], cfg.clip_eps);
                    a_loss -= surr;
                    clipped += f64::from(d_ratio == 0.0 && e.advantages[t] != 0.0);
                    kl += ratio - 1.0 - log_ratio;
                    // d(-surr)/d(log pi) = -d_ratio * ratio
                    w.push(-d_ratio * ratio * inv);
                }
                let d = Actor::log_prob_logit_grad(&probs, &e.actions, &w);
                actor.net.backward(&tape, &d, &mut ga);

                let (values, ctape) = critic.values(e.observations(n_f));
                c_loss += critic.accumulate_mse(&values, &ctape, &e.returns, inv, &mut gc);
            }
            stats.actor_loss += a_loss * inv;
            stats.critic_loss += c_loss * inv;
            stats.clip_fraction += clipped * inv;
            stats.approx_kl += kl * inv;
            stats.actor_grad_norm += clip_global_norm(&mut ga, cfg.grad_clip);
            stats.critic_grad_norm += clip_global_norm(&mut gc, cfg.grad_clip);
            actor_opt.step(&mut actor.net.params, &ga);
            critic_opt.step(&mut critic.net.params, &gc);
            n_batches += 1.0;
        }
    }
    if n_batches > 0.0 {
        stats.actor_loss /= n_batches;
        stats.critic_loss /= n_batches;
        stats.clip_fraction /= n_batches;
        stats.approx_kl /= n_batches;
        stats.actor_grad_norm /= n_batches;
        stats.critic_grad_norm /= n_batches;
    }
    actor.check_finite()?;
    Ok(stats)
}
