use rand::seq::SliceRandom;

use super::{compute_gae, ppo_loss, PpoConfig, RolloutBuffer};
use crate::comm::{team_mask, CommConfig, DropoutSchedule};
use crate::env::{Action, VecEnv, WorldConfig};
use crate::error::{Error, Result};
use crate::gradtape::kernels::log_softmax_row;
use crate::gradtape::{adam_step, clip_global_norm, AdamState, Tape};
use crate::policy::{sample_actions, ObsBatch, Policy};
use crate::rng::{self, StreamRng};
use crate::tasks::{EpisodeMetrics, TaskConfig};

/// Summary of one collect-and-update cycle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationStats {
    pub iteration: u64,
    pub timesteps: usize,
    /// Mean team reward per environment step.
    pub mean_step_reward: f64,
    /// Episodes that finished during collection, and statistics over them.
    pub episodes: usize,
    pub mean_episode_reward: f64,
    /// Percent.
    pub success_rate: f64,
    pub mean_episode_length: f64,
    pub avg_min_distance: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    /// Clip fraction of every minibatch in update order.
    pub minibatch_clip_fractions: Vec<f64>,
}

/// Owns the training environments, optimizer and random streams of one run.
pub struct Trainer {
    pub policy: Policy<f32>,
    pub adam: AdamState<f32>,
    pub ppo: PpoConfig,
    pub iteration: u64,
    world: WorldConfig,
    task: TaskConfig,
    comm: CommConfig,
    envs: VecEnv,
    dropout: Vec<Option<DropoutSchedule>>,
    episode_return: Vec<f64>,
    action_rng: StreamRng,
    shuffle_rng: StreamRng,
}

impl Trainer {
    /// `world.seed` is the master seed of every training stream.
    pub fn new(policy: Policy<f32>, world: WorldConfig, task: TaskConfig, comm: CommConfig, ppo: PpoConfig) -> Result<Self> {
        world.validate()?;
        task.validate()?;
        comm.validate()?;
        ppo.validate()?;
        let seed = world.seed;
        let adam = AdamState::new(&policy.params);
        let mut t = Self {
            policy,
            adam,
            ppo,
            iteration: 0,
            envs: VecEnv::new(&world, &task, 0, "train-env"),
            world,
            task,
            comm,
            dropout: Vec::new(),
            episode_return: Vec::new(),
            action_rng: rng::stream(seed, "train-actions", 0),
            shuffle_rng: rng::stream(seed, "minibatch", 0),
        };
        t.build_envs();
        Ok(t)
    }

    fn build_envs(&mut self) {
        let n = self.ppo.n_envs;
        let label = format!("train-env-m{}", self.world.num_agents);
        self.envs = VecEnv::new(&self.world, &self.task, n, &label);
        self.dropout = (0..n)
            .map(|k| {
                let stream = rng::stream(self.world.seed, &format!("dropout-m{}", self.world.num_agents), k as u64);
                self.comm.schedule(true, stream)
            })
            .collect();
        self.episode_return = vec![0.0; n];
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn comm(&self) -> &CommConfig {
        &self.comm
    }

    /// Switches to a new team size (or arena) keeping parameters and optimizer.
    pub fn set_world(&mut self, world: WorldConfig) -> Result<()> {
        world.validate()?;
        self.world = world;
        self.build_envs();
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::new(&self.policy.params);
    }

    fn current_batch(&mut self) -> Result<ObsBatch<f32>> {
        let mode = self.comm.mode();
        let mut obs = Vec::with_capacity(self.envs.len());
        let mut masks = Vec::with_capacity(self.envs.len());
        for (env, drop) in self.envs.envs().iter().zip(&mut self.dropout) {
            let s = env.state();
            masks.push(team_mask(&s.positions, mode, drop.as_mut(), s.step));
            obs.push(env.observe());
        }
        ObsBatch::new(&obs, &masks)
    }

    /// Runs the current policy for `T` steps in every environment, resetting
    /// finished episodes, and returns the buffer plus finished-episode records
    /// `(metrics, episode return)`.
    pub fn collect(&mut self) -> Result<(RolloutBuffer, Vec<(EpisodeMetrics, f64)>)> {
        let (n, m) = (self.envs.len(), self.world.num_agents);
        let mut buf = RolloutBuffer::new(self.ppo.rollout_len, n, m);
        let mut finished = Vec::new();
        for _ in 0..self.ppo.rollout_len {
            let batch = self.current_batch()?;
            let out = self.policy.forward(&batch)?;
            let actions = sample_actions(&out.logits, &mut self.action_rng);
            let mut logp = Vec::with_capacity(actions.len());
            let mut row = vec![0f32; Action::COUNT];
            for (r, &a) in actions.iter().enumerate() {
                log_softmax_row(out.logits.row(r), &mut row);
                logp.push(row[a]);
            }
            let joint: Vec<Vec<Action>> = actions
                .chunks(m)
                .map(|c| c.iter().map(|&a| Action::ALL[a]).collect())
                .collect();
            let rewards = self.envs.vec_step(&joint)?;
            let mut dones = Vec::with_capacity(n);
            for k in 0..n {
                self.episode_return[k] += rewards[k];
                let env = self.envs.env_mut(k);
                let s = env.state();
                dones.push(s.done);
                if s.done {
                    let metrics = EpisodeMetrics {
                        success: s.success,
                        steps: s.step,
                        avg_min_distance: env.task().avg_min_distance(&s.positions, &s.landmarks),
                        final_reward: rewards[k],
                    };
                    finished.push((metrics, self.episode_return[k]));
                    self.episode_return[k] = 0.0;
                    env.reset();
                }
            }
            let values: Vec<f64> = out.values.iter().map(|&v| f64::from(v)).collect();
            buf.push_step(&batch, &actions, &logp, &values, &rewards, &dones)?;
        }
        let batch = self.current_batch()?;
        let out = self.policy.forward(&batch)?;
        buf.set_bootstrap(out.values.iter().map(|&v| f64::from(v)).collect())?;
        Ok((buf, finished))
    }

    /// `K` epochs of shuffled minibatch updates on a complete buffer.
    pub fn update(&mut self, buf: &RolloutBuffer, stats: &mut IterationStats) -> Result<()> {
        if !buf.is_complete() {
            return Err(Error::precondition("ppo.update", "rollout buffer is incomplete"));
        }
        let gae = compute_gae(buf, self.ppo.gamma, self.ppo.lambda);
        let groups = buf.rollout_len * buf.n_envs;
        let per = groups / self.ppo.minibatches;
        let mut order: Vec<usize> = (0..groups).collect();
        let mut count = 0.0;
        for _ in 0..self.ppo.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for chunk in order.chunks(per) {
                let mb = buf.minibatch(chunk, &gae, self.ppo.normalize_advantages);
                let mut tape = Tape::new();
                let parts = ppo_loss(&mut tape, &self.policy, &mb, &self.ppo)?;
                self.policy.params.zero_grad();
                tape.backward(parts.loss, &mut self.policy.params)?;
                let norm = clip_global_norm(&mut self.policy.params, self.ppo.grad_clip);
                adam_step(&mut self.policy.params, &mut self.adam, self.ppo.lr)?;
                stats.policy_loss += parts.policy_loss;
                stats.value_loss += parts.value_loss;
                stats.entropy += parts.entropy;
                stats.total_loss += f64::from(tape.value(parts.loss).data()[0]);
                stats.clip_fraction += parts.clip_fraction;
                stats.approx_kl += parts.approx_kl;
                stats.grad_norm += norm;
                stats.minibatch_clip_fractions.push(parts.clip_fraction);
                count += 1.0;
            }
        }
        if count > 0.0 {
            for v in [
                &mut stats.policy_loss,
                &mut stats.value_loss,
                &mut stats.entropy,
                &mut stats.total_loss,
                &mut stats.clip_fraction,
                &mut stats.approx_kl,
                &mut stats.grad_norm,
            ] {
                *v /= count;
            }
        }
        Ok(())
    }

    /// Collect, then update.
    pub fn train_iteration(&mut self) -> Result<IterationStats> {
        let (buf, finished) = self.collect()?;
        self.iteration += 1;
        let mut stats = IterationStats {
            iteration: self.iteration,
            timesteps: buf.rewards.len(),
            mean_step_reward: buf.rewards.iter().sum::<f64>() / buf.rewards.len() as f64,
            episodes: finished.len(),
            ..IterationStats::default()
        };
        if !finished.is_empty() {
            let k = finished.len() as f64;
            stats.mean_episode_reward = finished.iter().map(|f| f.1).sum::<f64>() / k;
            stats.success_rate = 100.0 * finished.iter().filter(|f| f.0.success).count() as f64 / k;
            stats.mean_episode_length = finished.iter().map(|f| f.0.steps as f64).sum::<f64>() / k;
            let dists: Vec<f64> = finished.iter().filter_map(|f| f.0.avg_min_distance).collect();
            if !dists.is_empty() {
                stats.avg_min_distance = Some(dists.iter().sum::<f64>() / dists.len() as f64);
            }
        }
        self.update(&buf, &mut stats)?;
        Ok(stats)
    }

    /// Named random-stream states for checkpoints.
    pub fn rng_states(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = vec![
            ("train-actions".to_string(), rng::state_bytes(&self.action_rng)),
            ("minibatch".to_string(), rng::state_bytes(&self.shuffle_rng)),
        ];
        for (k, env) in self.envs.envs().iter().enumerate() {
            out.push((format!("env/{k}"), rng::state_bytes(env.rng())));
        }
        for (k, d) in self.dropout.iter().enumerate() {
            if let Some(d) = d {
                out.push((format!("dropout/{k}"), rng::state_bytes(d.rng())));
            }
        }
        out
    }

    /// Restores streams saved by [`Trainer::rng_states`]; environments restart
    /// their episodes from the restored streams.
    pub fn restore_rng_states(&mut self, states: &[(String, Vec<u8>)]) -> Result<()> {
        let mut parsed = Vec::with_capacity(states.len());
        for (name, bytes) in states {
            parsed.push((name.as_str(), rng::from_state_bytes(bytes)?));
        }
        for (name, r) in parsed {
            match name.split_once('/') {
                None if name == "train-actions" => self.action_rng = r,
                None if name == "minibatch" => self.shuffle_rng = r,
                Some(("env", k)) => {
                    let k: usize = k.parse().map_err(|_| Error::Checkpoint(format!("bad stream name {name}")))?;
                    if k >= self.envs.len() {
                        return Err(Error::Checkpoint(format!("stream {name} has no environment")));
                    }
                    self.envs.env_mut(k).restore_rng(r);
                }
                Some(("dropout", k)) => {
                    let k: usize = k.parse().map_err(|_| Error::Checkpoint(format!("bad stream name {name}")))?;
                    match self.dropout.get_mut(k) {
                        Some(Some(d)) => d.set_rng(r),
                        _ => return Err(Error::Checkpoint(format!("stream {name} has no dropout schedule"))),
                    }
                }
                _ => return Err(Error::Checkpoint(format!("unknown stream {name}"))),
            }
        }
        self.episode_return.iter_mut().for_each(|r| *r = 0.0);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;
    use crate::tasks::TaskKind;

    fn tiny(lr: f64) -> Trainer {
        let policy = Policy::new(
            PolicyConfig {
                hidden: 16,
                attn_dim: 16,
                hops: 2,
                ..PolicyConfig::default()
            },
            &mut rng::stream(0, "init", 0),
        )
        .unwrap();
        let world = WorldConfig {
            num_agents: 3,
            num_landmarks: 3,
            horizon: 10,
            seed: 4,
            ..WorldConfig::default()
        };
        let ppo = PpoConfig {
            n_envs: 4,
            rollout_len: 16,
            lr,
            epochs: 2,
            ..PpoConfig::default()
        };
        Trainer::new(policy, world, TaskConfig::new(TaskKind::Coverage), CommConfig::default(), ppo).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut t = tiny(0.0);
        let before = t.policy.params.digest();
        let s = t.train_iteration().unwrap();
        assert_eq!(t.policy.params.digest(), before);
        assert_eq!(s.timesteps, 64);
        assert!(s.episodes > 0 && s.policy_loss.is_finite());
        assert_eq!(s.minibatch_clip_fractions.len(), 8);
    }

    #[test]
    fn first_minibatch_is_on_policy() {
        let mut t = tiny(1e-3);
        let s = t.train_iteration().unwrap();
        assert_eq!(s.minibatch_clip_fractions[0], 0.0);
    }

    #[test]
    fn same_seed_same_stats() {
        let a = tiny(1e-3).train_iteration().unwrap();
        let b = tiny(1e-3).train_iteration().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rewards_are_shared_per_team() {
        let mut t = tiny(0.0);
        let (buf, _) = t.collect().unwrap();
        assert_eq!(buf.rewards.len(), 64);
        assert_eq!(buf.values.len(), 64 * 3);
        assert!(buf.log_probs.iter().all(|&l| l <= 0.0));
    }
}
