use rayon::prelude::*;

use super::world::{self, Action, EnvState, Observation, Transition, WorldConfig};
use crate::error::Result;
use crate::rng::{self, StreamRng};
use crate::tasks::TaskConfig;

/// One world instance with its own initialization stream.
#[derive(Clone, Debug)]
pub struct Env {
    cfg: WorldConfig,
    task: TaskConfig,
    rng: StreamRng,
    state: EnvState,
}

impl Env {
    pub fn new(cfg: WorldConfig, task: TaskConfig, mut rng: StreamRng) -> Self {
        let state = world::reset(&cfg, task.kind, &mut rng);
        Self { cfg, task, rng, state }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn rng(&self) -> &StreamRng {
        &self.rng
    }

    /// Replaces the initialization stream and starts a fresh episode from it.
    pub fn restore_rng(&mut self, rng: StreamRng) {
        self.rng = rng;
        self.reset();
    }

    pub fn reset(&mut self) -> &EnvState {
        self.state = world::reset(&self.cfg, self.task.kind, &mut self.rng);
        &self.state
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<f64> {
        let Transition { state, reward } = world::step(&self.cfg, &self.task, &self.state, actions)?;
        self.state = state;
        Ok(reward)
    }

    pub fn observe(&self) -> Vec<Observation> {
        world::observe(&self.state)
    }
}

/// `N` independent environments; instance `k` draws from stream `("env", k)`.
#[derive(Clone, Debug)]
pub struct VecEnv {
    envs: Vec<Env>,
    parallel: bool,
}

impl VecEnv {
    pub fn new(cfg: &WorldConfig, task: &TaskConfig, count: usize, stream_label: &str) -> Self {
        let envs = (0..count)
            .map(|k| {
                Env::new(
                    cfg.clone(),
                    task.clone(),
                    rng::stream(cfg.seed, stream_label, k as u64),
                )
            })
            .collect();
        Self { envs, parallel: false }
    }

    /// Steps instances on the rayon pool. Results are identical to serial stepping.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    pub fn env_mut(&mut self, k: usize) -> &mut Env {
        &mut self.envs[k]
    }

    pub fn vec_reset(&mut self) -> Vec<EnvState> {
        self.envs.iter_mut().map(|e| e.reset().clone()).collect()
    }

    /// Steps every instance with its own joint action; returns the rewards.
    pub fn vec_step(&mut self, actions: &[Vec<Action>]) -> Result<Vec<f64>> {
        if self.parallel {
            self.envs
                .par_iter_mut()
                .zip(actions.par_iter())
                .map(|(e, a)| e.step(a))
                .collect()
        } else {
            self.envs.iter_mut().zip(actions).map(|(e, a)| e.step(a)).collect()
        }
    }
}
