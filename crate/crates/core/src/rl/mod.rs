//! Actor-critic reinforcement learning: recurrent actor and critic, GAE,
//! clipped-surrogate updates and Adam.

mod actor;
mod adam;
mod critic;
mod gae;
mod ppo;

pub use actor::{joint_log_prob, sample_actions, Actor};
pub use adam::Adam;
pub use critic::Critic;
pub use gae::gae;
pub use ppo::{clipped_surrogate, ppo_update, PpoConfig, PpoStats, RolloutBuffer, RolloutEpisode};
