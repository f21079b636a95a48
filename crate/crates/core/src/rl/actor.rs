use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::AcquisitionPolicy;
use crate::nn::{Hidden, RecurrentNet, Tape};
use crate::{Error, Result};

/// Recurrent acquisition policy. Input per tick is the newest observation
/// column followed by the previous action (zeros before the first action);
/// the head emits a `(skip, fetch)` logit pair per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: RecurrentNet,
}

#[inline]
fn fetch_prob(skip: f64, fetch: f64) -> f64 {
    1.0 / (1.0 + (skip - fetch).exp())
}

impl Actor {
    /// Fresh actor whose fetch probability is `init_prob` for every feature
    /// up to the small random head weights.
    pub fn new(n_features: usize, hidden: usize, init_prob: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = RecurrentNet::new(2 * n_features, hidden, 2 * n_features, 0.01, &mut rng);
        let logit = (init_prob / (1.0 - init_prob)).ln();
        for pair in net.head_bias_mut().chunks_exact_mut(2) {
            pair[0] = 0.0;
            pair[1] = logit;
        }
        Self { net }
    }

    pub fn n_features(&self) -> usize {
        self.net.n_in / 2
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.net.params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence("non-finite actor parameters".into()))
        }
    }

    /// Writes `[obs; prev_action]` into `buf`.
    pub fn input(obs: &[f64], prev_action: &[bool], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(obs);
        buf.extend(prev_action.iter().map(|&a| f64::from(a)));
    }

    pub fn probs_from_logits(logits: &[f64], out: &mut [f64]) {
        for (o, l) in out.iter_mut().zip(logits.chunks_exact(2)) {
            *o = fetch_prob(l[0], l[1]);
        }
    }

    /// Runs a recorded input sequence (`T x 2N_F`, flat). Returns per-tick
    /// fetch probabilities (`T x N_F`) and the tape.
    pub fn sequence_probs(&self, inputs: &[f64]) -> (Vec<f64>, Tape) {
        let (logits, tape) = self
            .net
            .forward_sequence(inputs.chunks_exact(self.net.n_in));
        let mut probs = vec![0.0; logits.len() / 2];
        Self::probs_from_logits(&logits, &mut probs);
        (probs, tape)
    }

    /// Gradient of `sum_t w_t log pi(a_t)` with respect to the logits, for
    /// per-tick weights `w`.
    pub fn log_prob_logit_grad(probs: &[f64], actions: &[bool], weights: &[f64]) -> Vec<f64> {
        let n_f = probs.len() / weights.len().max(1);
        let mut d = vec![0.0; 2 * probs.len()];
        for (i, (&p, &a)) in probs.iter().zip(actions).enumerate() {
            let g = weights[i / n_f] * (f64::from(a) - p);
            d[2 * i] = -g;
            d[2 * i + 1] = g;
        }
        d
    }
}

/// Independent Bernoulli draws; returns the actions and their joint log-prob.
pub fn sample_actions<R: Rng>(probs: &[f64], rng: &mut R, actions: &mut [bool]) -> f64 {
    for (a, &p) in actions.iter_mut().zip(probs) {
        *a = rng.random::<f64>() < p;
    }
    joint_log_prob(probs, actions)
}

pub fn joint_log_prob(probs: &[f64], actions: &[bool]) -> f64 {
    probs
        .iter()
        .zip(actions)
        .map(|(&p, &a)| if a { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

impl AcquisitionPolicy for Actor {
    type Memory = (Hidden, Vec<f64>, Vec<f64>);

    fn n_features(&self) -> usize {
        Actor::n_features(self)
    }

    fn begin(&self) -> Self::Memory {
        (
            self.net.initial_hidden(),
            Vec::new(),
            vec![0.0; self.net.n_out],
        )
    }

    fn probs(&self, memory: &mut Self::Memory, obs: &[f64], prev_action: &[bool], out: &mut [f64]) {
        let (hidden, buf, logits) = memory;
        Actor::input(obs, prev_action, buf);
        self.net.step(hidden, buf, logits);
        Actor::probs_from_logits(logits, out);
    }
}
