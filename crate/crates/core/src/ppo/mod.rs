//! Multi-agent PPO with one shared parameter set.
//!
//! Every agent of every environment contributes its own sample (observation,
//! action, old log-probability, value) while the reward is the team's. GAE
//! runs per `(environment, agent)` stream, and minibatches are built from
//! whole `(environment, timestep)` slices so a team is never split.

mod gae;
mod loss;
mod rollout;
mod trainer;

use serde::{Deserialize, Serialize};

pub use gae::{compute_gae, gae_stream, GaeOutput};
pub use loss::{normalize, ppo_loss, LossParts, Minibatch};
pub use rollout::RolloutBuffer;
pub use trainer::{IterationStats, Trainer};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Full passes over each rollout.
    pub epochs: usize,
    pub lr: f64,
    pub n_envs: usize,
    pub rollout_len: usize,
    pub minibatches: usize,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            epochs: 4,
            lr: 1e-4,
            n_envs: 32,
            rollout_len: 128,
            minibatches: 4,
            grad_clip: 0.5,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("ppo.gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("ppo.lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.clip_eps > 0.0) {
            return bad("ppo.clip_eps must be positive".into());
        }
        if self.lr < 0.0 || self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return bad("ppo.lr and loss coefficients must be non-negative".into());
        }
        if self.n_envs == 0 || self.rollout_len == 0 || self.minibatches == 0 {
            return bad("ppo.n_envs, rollout_len and minibatches must be positive".into());
        }
        if (self.n_envs * self.rollout_len) % self.minibatches != 0 {
            return bad(format!(
                "{} minibatches do not divide {} timesteps",
                self.minibatches,
                self.n_envs * self.rollout_len
            ));
        }
        Ok(())
    }

    /// Environment steps collected per iteration (`N·T`).
    pub fn timesteps_per_iteration(&self) -> usize {
        self.n_envs * self.rollout_len
    }

    pub fn set_coefficients(&mut self, value_coef: f64, entropy_coef: f64) {
        self.value_coef = value_coef;
        self.entropy_coef = entropy_coef;
    }
}
