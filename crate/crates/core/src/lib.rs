//! Cost-bounded, time-varying feature acquisition for multivariate
//! time-series prediction.
//!
//! A recurrent actor decides, tick by tick, which features of a subject's
//! sequence to fetch. Fetched values enter a masked observation state that a
//! frozen predictor consumes; the actor is trained with PPO against a
//! prediction reward plus a gated, scheduled cost penalty until the
//! validation cost satisfies a budget. The predictor is then refit on the
//! masked states the converged policy produces.
//!
//! Module map:
//!
//! * [`data`]: synthetic generator, CSV ingestion, interpolation, splits.
//! * [`cost`]: simple/complex acquisition costs.
//! * [`predictor`]: gradient-boosted trees, LSTM, and linear predictors.
//! * [`env`]: the masked-observation environment.
//! * [`reward`]: prediction/cost rewards, gate and cost-coefficient schedule.
//! * [`rl`]: actor, critic, GAE, PPO and Adam.
//! * [`trainer`]: the end-to-end training pipeline and its ablations.
//! * [`baselines`]: static feature-selection baselines.
//! * [`eval`]: metrics, activation maps and cost-loss curves.

pub mod baselines;
pub mod config;
pub mod cost;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod matrix;
pub mod nn;
pub mod predictor;
pub mod reward;
pub mod rl;
pub mod trainer;

pub use error::{Error, Result};

/// Value used for never-observed state entries, including the initial state
/// column. Sits near the bottom of a standardized feature distribution.
pub const FILL_VALUE: f64 = -4.0;
