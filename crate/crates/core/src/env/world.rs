use rand::Rng;

use crate::error::{Error, Result};
use crate::tasks::{TaskConfig, TaskKind};

pub type Point = [f64; 2];

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Physical and episode parameters of one world instance.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    /// The arena is the square `[-h, h]²`; only initialization is confined to it.
    pub arena_half_width: f64,
    pub dt: f64,
    pub damping: f64,
    pub horizon: usize,
    pub num_agents: usize,
    pub num_landmarks: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            arena_half_width: 2.0,
            dt: 0.1,
            damping: 0.5,
            horizon: 50,
            num_agents: 3,
            num_landmarks: 3,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.num_agents == 0 || self.num_landmarks == 0 {
            return Err(Error::Config("need at least one agent and one landmark".into()));
        }
        if !(self.arena_half_width > 0.0) {
            return Err(Error::Config("arena_half_width must be positive".into()));
        }
        Ok(())
    }

    /// Terminal speed per axis under constant unit acceleration.
    pub fn max_speed(&self) -> f64 {
        self.dt / (1.0 - self.damping)
    }
}

/// Discrete acceleration command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Noop,
    PosX,
    NegX,
    PosY,
    NegY,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [Action::Noop, Action::PosX, Action::NegX, Action::PosY, Action::NegY];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn accel(self) -> Point {
        match self {
            Action::Noop => [0.0, 0.0],
            Action::PosX => [1.0, 0.0],
            Action::NegX => [-1.0, 0.0],
            Action::PosY => [0.0, 1.0],
            Action::NegY => [0.0, -1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub positions: Vec<Point>,
    pub velocities: Vec<Point>,
    pub landmarks: Vec<Point>,
    pub step: usize,
    pub done: bool,
    pub success: bool,
}

impl EnvState {
    pub fn num_agents(&self) -> usize {
        self.positions.len()
    }
}

/// What agent `i` sees: its own state and every landmark relative to itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `[x, y, vx, vy]`
    pub own: [f64; 4],
    /// `landmark[l] − position[i]`
    pub relative: Vec<Point>,
}

fn uniform_point<R: Rng + ?Sized>(rng: &mut R, half: f64) -> Point {
    [rng.random_range(-half..=half), rng.random_range(-half..=half)]
}

/// Fresh episode: agents and landmarks i.i.d. uniform, velocities zero.
///
/// Formation landmarks are drawn from the central half of the arena so the
/// target circle fits inside it.
pub fn reset<R: Rng + ?Sized>(cfg: &WorldConfig, task: TaskKind, rng: &mut R) -> EnvState {
    let h = cfg.arena_half_width;
    let positions = (0..cfg.num_agents).map(|_| uniform_point(rng, h)).collect();
    let landmark_half = if task == TaskKind::Formation { h / 2.0 } else { h };
    let landmarks = (0..cfg.num_landmarks)
        .map(|_| uniform_point(rng, landmark_half))
        .collect();
    EnvState {
        positions,
        velocities: vec![[0.0, 0.0]; cfg.num_agents],
        landmarks,
        step: 0,
        done: false,
        success: false,
    }
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    /// Shared team reward evaluated on the new state.
    pub reward: f64,
}

/// Semi-implicit double integrator: `v ← damping·v + a·dt`, then `p ← p + v·dt`.
pub fn step(cfg: &WorldConfig, task: &TaskConfig, state: &EnvState, actions: &[Action]) -> Result<Transition> {
    if state.done {
        return Err(Error::EpisodeFinished);
    }
    if actions.len() != state.num_agents() {
        return Err(Error::shape(
            "env.step",
            format!("{} actions for {} agents", actions.len(), state.num_agents()),
        ));
    }
    let mut next = state.clone();
    for ((p, v), a) in next.positions.iter_mut().zip(&mut next.velocities).zip(actions) {
        let acc = a.accel();
        for d in 0..2 {
            v[d] = cfg.damping * v[d] + acc[d] * cfg.dt;
            p[d] += v[d] * cfg.dt;
        }
    }
    next.step += 1;
    next.success = task.success(&next.positions, &next.landmarks);
    next.done = next.success || next.step >= cfg.horizon;
    let reward = task.reward(&next.positions, &next.landmarks);
    Ok(Transition { state: next, reward })
}

/// Per-agent observations; no agent sees another agent's state.
pub fn observe(state: &EnvState) -> Vec<Observation> {
    state
        .positions
        .iter()
        .zip(&state.velocities)
        .map(|(p, v)| Observation {
            own: [p[0], p[1], v[0], v[1]],
            relative: state
                .landmarks
                .iter()
                .map(|l| [l[0] - p[0], l[1] - p[1]])
                .collect(),
        })
        .collect()
}
