//! LSTM predictor trained with backpropagation through time.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassWeights;
use crate::data::{EpisodeData, Task};
use crate::nn::{clip_global_norm, RecurrentNet, Tape};
use crate::rl::Adam;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrentConfig {
    pub hidden: usize,
    pub epochs: usize,
    /// Initial learning rate; decays as `max(1e-4, lr (1 - p^2))` over
    /// training progress `p`.
    pub lr: f64,
    pub batch_episodes: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 20,
            lr: 1e-3,
            batch_episodes: 16,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentPredictor {
    pub task: Task,
    pub net: RecurrentNet,
    pub class_weights: Option<ClassWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Learning rate at training progress `p` in `[0, 1]`.
pub fn scheduled_lr(lr0: f64, progress: f64) -> f64 {
    (lr0 * (1.0 - progress * progress)).max(1e-4)
}

#[inline]
fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    (ea / (ea + eb), eb / (ea + eb))
}

impl RecurrentPredictor {
    pub fn new(
        task: Task,
        n_features: usize,
        hidden: usize,
        seed: u64,
        class_weights: Option<ClassWeights>,
    ) -> Self {
        let n_out = match task {
            Task::Regression => 1,
            Task::Classification => 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            task,
            net: RecurrentNet::new(n_features, hidden, n_out, 1.0, &mut rng),
            class_weights,
        }
    }

    pub fn n_features(&self) -> usize {
        self.net.n_in
    }

    /// One prediction per input column, each depending only on columns up
    /// to and including its own.
    pub fn predict_sequence<'a, I>(&self, columns: I) -> Vec<f64>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let (out, _) = self.net.forward_sequence(columns);
        self.link(&out)
    }

    fn link(&self, out: &[f64]) -> Vec<f64> {
        match self.task {
            Task::Regression => out.to_vec(),
            Task::Classification => out
                .chunks_exact(2)
                .map(|o| softmax2(o[0], o[1]).1)
                .collect(),
        }
    }

    /// Loss summed over ticks and its gradient with respect to the head
    /// outputs. Regression uses absolute error, classification class-weighted
    /// cross-entropy.
    pub(crate) fn loss_and_grad(&self, out: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
        match self.task {
            Task::Regression => {
                let mut loss = 0.0;
                let grad = out
                    .iter()
                    .zip(y)
                    .map(|(p, t)| {
                        loss += (p - t).abs();
                        (p - t).signum() * f64::from(p != t)
                    })
                    .collect();
                (loss, grad)
            }
            Task::Classification => {
                let w = self.class_weights.unwrap_or(ClassWeights {
                    w_neg: 0.5,
                    w_pos: 0.5,
                });
                let mut loss = 0.0;
                let mut grad = Vec::with_capacity(out.len());
                for (o, &t) in out.chunks_exact(2).zip(y) {
                    let (p0, p1) = softmax2(o[0], o[1]);
                    let (weight, target) = if t > 0.0 { (w.w_pos, 1) } else { (w.w_neg, 0) };
                    let p_t = if target == 1 { p1 } else { p0 };
                    loss -= weight * p_t.max(1e-300).ln();
                    grad.push(weight * (p0 - f64::from(target == 0)));
                    grad.push(weight * (p1 - f64::from(target == 1)));
                }
                (loss, grad)
            }
        }
    }

    fn episode_loss(&self, e: &EpisodeData) -> f64 {
        let (out, _) = self.net.forward_sequence(e.x.columns());
        self.loss_and_grad(&out, &e.y).0
    }

    /// Mean per-tick loss over a set of episodes.
    pub fn mean_loss(&self, episodes: &[EpisodeData]) -> f64 {
        let ticks: usize = episodes.iter().map(EpisodeData::n_ticks).sum();
        episodes.iter().map(|e| self.episode_loss(e)).sum::<f64>() / ticks.max(1) as f64
    }

    /// Adds the gradient of the episode's summed loss to `grads` and returns
    /// that loss.
    pub fn accumulate_gradient(&self, e: &EpisodeData, grads: &mut [f64]) -> f64 {
        let (out, tape): (Vec<f64>, Tape) = self.net.forward_sequence(e.x.columns());
        let (loss, d_out) = self.loss_and_grad(&out, &e.y);
        self.net.backward(&tape, &d_out, grads);
        loss
    }
}

/// Trains a recurrent predictor and keeps the parameters of the epoch with
/// the lowest validation loss. Returns the model and per-epoch statistics.
pub fn fit_recurrent(
    train: &[EpisodeData],
    val: &[EpisodeData],
    task: Task,
    cfg: &RecurrentConfig,
    class_weights: Option<ClassWeights>,
) -> Result<(RecurrentPredictor, Vec<EpochStats>)> {
    let n_f = train
        .first()
        .map(EpisodeData::n_features)
        .ok_or_else(|| Error::Data("empty training set".into()))?;
    if train.iter().chain(val).any(|e| e.n_features() != n_f) {
        return Err(Error::Shape("sequences disagree on feature count".into()));
    }
    let mut model = RecurrentPredictor::new(task, n_f, cfg.hidden, cfg.seed, class_weights);
    let mut history = Vec::new();
    if cfg.epochs == 0 {
        return Ok((model, history));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut adam = Adam::new(model.net.params.len(), cfg.lr, 1e-8);
    let batch = cfg.batch_episodes.max(1);
    let steps_per_epoch = train.len().div_ceil(batch);
    let total_steps = (steps_per_epoch * cfg.epochs) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut grads = vec![0.0; model.net.params.len()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_ticks = 0usize;
        for chunk in order.chunks(batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let ticks: usize = chunk.iter().map(|&i| train[i].n_ticks()).sum();
            for &i in chunk {
                epoch_loss += model.accumulate_gradient(&train[i], &mut grads);
            }
            epoch_ticks += ticks;
            grads.iter_mut().for_each(|g| *g /= ticks as f64);
            clip_global_norm(&mut grads, cfg.grad_clip);
            adam.lr = scheduled_lr(cfg.lr, step as f64 / total_steps);
            adam.step(&mut model.net.params, &grads);
            step += 1;
        }
        let train_loss = epoch_loss / epoch_ticks.max(1) as f64;
        if !train_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "recurrent predictor loss is {train_loss} at epoch {epoch}; lower the learning rate"
            )));
        }
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            model.mean_loss(val)
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.net.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        model.net.params = params;
    }
    Ok((model, history))
}
