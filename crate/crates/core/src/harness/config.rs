//! Run configuration.
//!
//! The file is TOML: `key = value` lines grouped under `[section]` headers.
//! Every key is optional and falls back to the defaults below; unknown keys
//! are rejected. Sections:
//!
//! ```toml
//! seed = 0
//! output_dir = "runs/coverage-m3"
//!
//! [task]        # kind = "coverage" | "formation" | "line", plus goal tolerances
//! [world]       # agents, arena_half_width, dt, damping, horizon
//! [comm]        # radius (omit for full connectivity), dropout switches
//! [policy]      # hidden, attn_dim, hops, variant = "mha" | "exp" | "uniform", heads, tie_hops
//! [ppo]         # gamma, lambda, clip_eps, value_coef, entropy_coef, epochs, lr, ...
//! [train]       # iterations, eval_every, eval_episodes, success_threshold, ...
//! [curriculum]  # stages = [3, 5, 7, 10], max_updates_per_stage
//! [zeroshot]    # deltas = [-2, -1, 0, 1, 2]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comm::CommConfig;
use crate::env::WorldConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyConfig;
use crate::ppo::PpoConfig;
use crate::tasks::{TaskConfig, TaskKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub agents: usize,
    /// Defaults by task: 2 for coverage (a 4×4 arena), 1 otherwise.
    pub arena_half_width: Option<f64>,
    pub dt: f64,
    pub damping: f64,
    pub horizon: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        Self {
            agents: 3,
            arena_half_width: None,
            dt: w.dt,
            damping: w.damping,
            horizon: w.horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// PPO updates (collect + optimize cycles) in a plain training run.
    pub iterations: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Fraction in `[0, 1]`.
    pub success_threshold: f64,
    pub checkpoint_every: usize,
    /// End a plain training run once evaluation reaches the threshold.
    pub stop_at_threshold: bool,
    /// Episodes of the final evaluation written as trajectories.
    pub record_episodes: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iterations: 2500,
            eval_every: 50,
            eval_episodes: 30,
            success_threshold: 0.85,
            checkpoint_every: 50,
            stop_at_threshold: false,
            record_episodes: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSection {
    pub stages: Vec<usize>,
    pub max_updates_per_stage: usize,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self {
            stages: vec![3, 5, 7, 10],
            max_updates_per_stage: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotSection {
    pub deltas: Vec<i64>,
}

impl Default for ZeroShotSection {
    fn default() -> Self {
        Self {
            deltas: vec![-2, -1, 0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub task: TaskConfig,
    pub world: WorldSection,
    pub comm: CommConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub train: TrainSection,
    pub curriculum: CurriculumSection,
    pub zeroshot: ZeroShotSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            task: TaskConfig::default(),
            world: WorldSection::default(),
            comm: CommConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            train: TrainSection::default(),
            curriculum: CurriculumSection::default(),
            zeroshot: ZeroShotSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.comm.validate()?;
        self.policy.validate()?;
        self.ppo.validate()?;
        if self.world.agents == 0 {
            return Err(Error::Config("world.agents must be at least 1".into()));
        }
        if self.train.eval_episodes == 0 || self.train.eval_every == 0 {
            return Err(Error::Config("train.eval_episodes and eval_every must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train.success_threshold) {
            return Err(Error::Config("train.success_threshold must lie in [0, 1]".into()));
        }
        let s = &self.curriculum.stages;
        if s.is_empty() || s.contains(&0) || s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("curriculum.stages must be non-empty, positive and strictly increasing".into()));
        }
        self.world_for(self.world.agents).validate()
    }

    pub fn arena_half_width(&self) -> f64 {
        self.world.arena_half_width.unwrap_or(match self.task.kind {
            TaskKind::Coverage => 2.0,
            TaskKind::Formation | TaskKind::Line => 1.0,
        })
    }

    /// World for a team of `agents` under this configuration's task and seed.
    pub fn world_for(&self, agents: usize) -> WorldConfig {
        WorldConfig {
            arena_half_width: self.arena_half_width(),
            dt: self.world.dt,
            damping: self.world.damping,
            horizon: self.world.horizon,
            num_agents: agents,
            num_landmarks: self.task.num_landmarks(agents),
            seed: self.seed,
        }
    }
}
