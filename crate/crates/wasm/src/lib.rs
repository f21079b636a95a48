//! wasm-bindgen entry points for the static demo page in `www/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use dynafs::baselines::select_knapsack;
use dynafs::cost::{episode_cost, CostMode};
use dynafs::data::{generate_synthetic, SyntheticConfig};
use dynafs::env::{roll_episode, ConstantPolicy, SynthMode};
use dynafs::reward::gate;

/// Gate values at `n` evenly spaced training costs in `[0, c_hi]`.
#[wasm_bindgen]
pub fn gate_curve(c_max: f64, alpha: f64, c_hi: f64, n: usize) -> Result<Vec<f64>, String> {
    if !(c_max > 0.0) || !(c_hi > 0.0) || n < 2 {
        return Err("need c_max > 0, c_hi > 0 and at least 2 points".into());
    }
    Ok((0..n)
        .map(|i| gate(c_hi * i as f64 / (n - 1) as f64, c_max, alpha))
        .collect())
}

/// One synthetic episode rolled out under a constant fetch probability.
#[wasm_bindgen]
pub struct Simulation {
    n_features: usize,
    n_ticks: usize,
    state: Vec<f64>,
    actions: Vec<u8>,
    cost: f64,
}

#[wasm_bindgen]
impl Simulation {
    #[wasm_bindgen(getter)]
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[wasm_bindgen(getter)]
    pub fn n_ticks(&self) -> usize {
        self.n_ticks
    }

    /// Row-major `n_features x (n_ticks + 1)` state; the fill value marks
    /// never-observed entries.
    pub fn state(&self) -> Vec<f64> {
        self.state.clone()
    }

    /// Row-major `n_features x n_ticks` fetch indicators.
    pub fn actions(&self) -> Vec<u8> {
        self.actions.clone()
    }

    /// Mean per-tick cost (simple setting).
    #[wasm_bindgen(getter)]
    pub fn cost(&self) -> f64 {
        self.cost
    }
}

#[wasm_bindgen]
pub fn simulate(
    n_features: usize,
    n_ticks: usize,
    prob: f64,
    seed: u64,
) -> Result<Simulation, String> {
    if !(0.0..=1.0).contains(&prob) {
        return Err("prob must lie in [0, 1]".into());
    }
    let cfg = SyntheticConfig {
        n_subjects: 1,
        n_features,
        n_informative: n_features.clamp(1, 2),
        n_static: 0,
        tick_range: (n_ticks, n_ticks),
        seed,
        ..Default::default()
    };
    let data = generate_synthetic(&cfg).map_err(|e| e.to_string())?;
    let ep = &data.dataset.episodes[0];
    let policy = ConstantPolicy { n_features, prob };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = roll_episode(ep, &policy, SynthMode::Sample, false, &mut rng);
    let cost = episode_cost(&r.actions, &data.dataset.specs, CostMode::Simple)
        .map_err(|e| e.to_string())?
        .mean_per_tick;
    let state = (0..n_features)
        .flat_map(|k| (0..=n_ticks).map(move |t| (k, t)))
        .map(|(k, t)| r.state.get(k, t))
        .collect();
    let actions = (0..n_features)
        .flat_map(|k| (0..n_ticks).map(move |t| (k, t)))
        .map(|(k, t)| u8::from(r.actions.get(k, t)))
        .collect();
    Ok(Simulation {
        n_features,
        n_ticks,
        state,
        actions,
        cost,
    })
}

/// Indices chosen by the budgeted knapsack over per-tick costs.
#[wasm_bindgen]
pub fn knapsack(importance: &[f64], costs: &[f64], budget: f64) -> Result<Vec<u32>, String> {
    if importance.len() != costs.len() {
        return Err("importance and costs differ in length".into());
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err("budget must be positive and finite".into());
    }
    if costs
        .iter()
        .chain(importance)
        .any(|v| !v.is_finite() || *v < 0.0)
    {
        return Err("importance and costs must be finite and non-negative".into());
    }
    let sel = select_knapsack(importance, costs, budget);
    Ok(sel.indices().into_iter().map(|i| i as u32).collect())
}
