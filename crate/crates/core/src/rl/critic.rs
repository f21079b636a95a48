use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{RecurrentNet, Tape};

/// Recurrent state-value estimate from the observation history alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: RecurrentNet,
}

impl Critic {
    pub fn new(n_features: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            net: RecurrentNet::new(n_features, hidden, 1, 0.1, &mut rng),
        }
    }

    /// Values for a sequence of observation columns.
    pub fn values<'a, I>(&self, obs: I) -> (Vec<f64>, Tape)
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        self.net.forward_sequence(obs)
    }

    /// Adds the gradient of `scale * sum_t (V_t - R_t)^2` to `grads` and
    /// returns the unscaled sum.
    pub fn accumulate_mse(
        &self,
        values: &[f64],
        tape: &Tape,
        returns: &[f64],
        scale: f64,
        grads: &mut [f64],
    ) -> f64 {
        let mut sq = 0.0;
        let d: Vec<f64> = values
            .iter()
            .zip(returns)
            .map(|(v, r)| {
                sq += (v - r) * (v - r);
                2.0 * scale * (v - r)
            })
            .collect();
        self.net.backward(tape, &d, grads);
        sq
    }
}
