use super::gae::GaeOutput;
use super::loss::{normalize, Minibatch};
use crate::error::{Error, Result};
use crate::policy::ObsBatch;

/// One iteration of experience from `N` environments over `T` steps.
///
/// Group `t·N + env` is the team of environment `env` at step `t`; sample
/// `group·M + agent` is one agent within it.
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    pub rollout_len: usize,
    pub n_envs: usize,
    pub agents: usize,
    pub obs: ObsBatch<f32>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f64>,
    /// Shared team reward per group.
    pub rewards: Vec<f64>,
    /// Episode ended after this group's step.
    pub dones: Vec<bool>,
    /// `V(s_T)` per `(env, agent)`.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(rollout_len: usize, n_envs: usize, agents: usize) -> Self {
        Self {
            rollout_len,
            n_envs,
            agents,
            obs: ObsBatch {
                groups: 0,
                agents,
                entities: 0,
                own: crate::gradtape::Tensor::zeros(&[0, crate::policy::OWN_DIM]),
                relative: crate::gradtape::Tensor::zeros(&[0, crate::policy::ENTITY_DIM]),
                masks: Vec::new(),
            },
            actions: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            bootstrap: Vec::new(),
        }
    }

    pub fn steps_recorded(&self) -> usize {
        self.rewards.len() / self.n_envs.max(1)
    }

    /// Appends one step of all environments.
    pub fn push_step(
        &mut self,
        obs: &ObsBatch<f32>,
        actions: &[usize],
        log_probs: &[f32],
        values: &[f64],
        rewards: &[f64],
        dones: &[bool],
    ) -> Result<()> {
        let rows = self.n_envs * self.agents;
        if obs.groups != self.n_envs
            || obs.agents != self.agents
            || actions.len() != rows
            || log_probs.len() != rows
            || values.len() != rows
            || rewards.len() != self.n_envs
            || dones.len() != self.n_envs
        {
            return Err(Error::shape("rollout_buffer", "step does not match the buffer layout"));
        }
        if let Some(i) = log_probs.iter().position(|&lp| !(lp <= 0.0)) {
            return Err(Error::precondition(
                "rollout_buffer",
                format!("log-probability {} of sample {i} is not <= 0", log_probs[i]),
            ));
        }
        self.obs.extend(obs)?;
        self.actions.extend_from_slice(actions);
        self.log_probs.extend_from_slice(log_probs);
        self.values.extend_from_slice(values);
        self.rewards.extend_from_slice(rewards);
        self.dones.extend_from_slice(dones);
        Ok(())
    }

    pub fn set_bootstrap(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_envs * self.agents {
            return Err(Error::shape("rollout_buffer", "bootstrap needs one value per agent"));
        }
        self.bootstrap = values;
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.steps_recorded() == self.rollout_len && self.bootstrap.len() == self.n_envs * self.agents
    }

    /// Samples of the listed groups, with advantages normalized over them if asked.
    pub fn minibatch(&self, groups: &[usize], gae: &GaeOutput, normalize_advantages: bool) -> Minibatch<f32> {
        let m = self.agents;
        let samples: Vec<usize> = groups.iter().flat_map(|&g| (g * m)..(g * m + m)).collect();
        let mut adv: Vec<f64> = samples.iter().map(|&s| gae.advantages[s]).collect();
        if normalize_advantages {
            normalize(&mut adv);
        }
        Minibatch {
            obs: self.obs.select(groups),
            actions: samples.iter().map(|&s| self.actions[s]).collect(),
            old_log_probs: samples.iter().map(|&s| self.log_probs[s]).collect(),
            advantages: adv.into_iter().map(|a| a as f32).collect(),
            returns: samples.iter().map(|&s| gae.returns[s] as f32).collect(),
        }
    }
}
