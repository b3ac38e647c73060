//! Episode evaluation on freshly seeded environments.

use rand::Rng;

use crate::comm::{team_mask, AdjacencyMask, CommConfig, DropoutSchedule};
use crate::env::trajectory::{state_records, TrajectoryRecord};
use crate::env::{distance, Action, Env, EnvState, Observation, WorldConfig};
use crate::error::Result;
use crate::policy::{greedy_actions, sample_actions, ObsBatch, Policy};
use crate::rng::{self, StreamRng};
use crate::tasks::{hungarian, EpisodeMetrics, TaskConfig};

/// What a controller sees of one team at one step.
pub struct TeamView<'a> {
    pub observations: Vec<Observation>,
    pub mask: AdjacencyMask,
    pub state: &'a EnvState,
}

/// Chooses joint actions for several teams at once.
pub trait Controller {
    fn act(&mut self, teams: &[TeamView<'_>]) -> Result<Vec<Vec<Action>>>;
}

/// The learned network, acting per agent from its own observation and messages.
pub struct NetworkController<'a> {
    pub policy: &'a Policy<f32>,
    /// Argmax actions if set, samples otherwise.
    pub greedy: bool,
    pub rng: StreamRng,
}

impl Controller for NetworkController<'_> {
    fn act(&mut self, teams: &[TeamView<'_>]) -> Result<Vec<Vec<Action>>> {
        let obs: Vec<Vec<Observation>> = teams.iter().map(|t| t.observations.clone()).collect();
        let masks: Vec<AdjacencyMask> = teams.iter().map(|t| t.mask.clone()).collect();
        let out = self.policy.forward(&ObsBatch::new(&obs, &masks)?)?;
        let idx = if self.greedy {
            greedy_actions(&out.logits)
        } else {
            sample_actions(&out.logits, &mut self.rng)
        };
        let mut it = idx.into_iter().map(|a| Action::ALL[a]);
        Ok(teams
            .iter()
            .map(|t| it.by_ref().take(t.observations.len()).collect())
            .collect())
    }
}

/// Hand-written coverage controller with global knowledge: agents are matched
/// to landmarks and steer toward their target with a velocity-tracking rule.
pub struct ScriptedCoverage {
    pub dt: f64,
    pub damping: f64,
}

impl ScriptedCoverage {
    fn steer(&self, p: [f64; 2], v: [f64; 2], target: [f64; 2]) -> Action {
        // Speed that would reach the target in a few steps, capped by what the
        // actuators can sustain.
        let vmax = self.dt / (1.0 - self.damping);
        let mut err = [0.0; 2];
        for d in 0..2 {
            let want = ((target[d] - p[d]) / (3.0 * self.dt)).clamp(-vmax, vmax);
            // Velocity after a no-op minus the wanted velocity.
            err[d] = want - self.damping * v[d];
        }
        let (axis, mag) = if err[0].abs() >= err[1].abs() { (0, err[0]) } else { (1, err[1]) };
        if mag.abs() < 0.5 * self.dt {
            return Action::Noop;
        }
        match (axis, mag > 0.0) {
            (0, true) => Action::PosX,
            (0, false) => Action::NegX,
            (_, true) => Action::PosY,
            (_, false) => Action::NegY,
        }
    }
}

impl Controller for ScriptedCoverage {
    fn act(&mut self, teams: &[TeamView<'_>]) -> Result<Vec<Vec<Action>>> {
        teams
            .iter()
            .map(|t| {
                let s = t.state;
                let n = s.positions.len().max(s.landmarks.len());
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|a| {
                        (0..n)
                            .map(|l| match (s.positions.get(a), s.landmarks.get(l)) {
                                (Some(p), Some(q)) => distance(*p, *q),
                                _ => 0.0,
                            })
                            .collect()
                    })
                    .collect();
                let assignment = hungarian(&cost)?;
                let mut target = s.positions.clone();
                for (l, &a) in assignment.perm.iter().enumerate() {
                    if a < s.positions.len() && l < s.landmarks.len() {
                        target[a] = s.landmarks[l];
                    }
                }
                Ok((0..s.positions.len())
                    .map(|i| self.steer(s.positions[i], s.velocities[i], target[i]))
                    .collect())
            })
            .collect()
    }
}

/// Summary over evaluation episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeMetrics>,
    pub episode_rewards: Vec<f64>,
    /// Percent.
    pub success_rate: f64,
    /// Steps to success; failed episodes count the horizon.
    pub mean_steps: f64,
    pub avg_min_distance: Option<f64>,
    pub mean_final_reward: f64,
    pub mean_episode_reward: f64,
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Where evaluation episodes come from.
pub struct EvalSetup<'a> {
    pub world: &'a WorldConfig,
    pub task: &'a TaskConfig,
    pub comm: &'a CommConfig,
    pub episodes: usize,
    /// Namespaces the evaluation streams (e.g. the training iteration).
    pub round: u64,
    /// Leading episodes to export as trajectories.
    pub record: usize,
}

/// Runs `episodes` episodes in lockstep. Environment `k` is seeded from the
/// dedicated `eval` stream family, disjoint from every training stream.
pub fn evaluate<C: Controller + ?Sized>(controller: &mut C, setup: &EvalSetup<'_>) -> Result<EvalSummary> {
    let (world, n) = (setup.world, setup.episodes);
    let label = format!("eval-r{}-m{}", setup.round, world.num_agents);
    let mut envs: Vec<Env> = (0..n)
        .map(|k| Env::new(world.clone(), setup.task.clone(), rng::stream(world.seed, &label, k as u64)))
        .collect();
    let mut dropout: Vec<Option<DropoutSchedule>> = (0..n)
        .map(|k| setup.comm.schedule(false, rng::stream(world.seed, &format!("{label}-dropout"), k as u64)))
        .collect();
    let mode = setup.comm.mode();
    let mut returns = vec![0.0; n];
    let mut finals = vec![0.0; n];
    let mut trajectory = Vec::new();
    for (k, env) in envs.iter().enumerate().take(setup.record) {
        trajectory.extend(state_records(k, env.state(), None, None));
    }
    loop {
        let live: Vec<usize> = (0..n).filter(|&k| !envs[k].state().done).collect();
        if live.is_empty() {
            break;
        }
        let views: Vec<TeamView<'_>> = live
            .iter()
            .map(|&k| {
                let s = envs[k].state();
                TeamView {
                    observations: envs[k].observe(),
                    mask: team_mask(&s.positions, mode, dropout[k].as_mut(), s.step),
                    state: s,
                }
            })
            .collect();
        let actions = controller.act(&views)?;
        drop(views);
        for (&k, a) in live.iter().zip(&actions) {
            let r = envs[k].step(a)?;
            returns[k] += r;
            finals[k] = r;
            if k < setup.record {
                trajectory.extend(state_records(k, envs[k].state(), Some(a.as_slice()), Some(r)));
            }
        }
    }
    let episodes: Vec<EpisodeMetrics> = envs
        .iter()
        .zip(&finals)
        .map(|(e, &f)| {
            let s = e.state();
            EpisodeMetrics {
                success: s.success,
                steps: if s.success { s.step } else { world.horizon },
                avg_min_distance: e.task().avg_min_distance(&s.positions, &s.landmarks),
                final_reward: f,
            }
        })
        .collect();
    let k = n.max(1) as f64;
    let dists: Vec<f64> = episodes.iter().filter_map(|e| e.avg_min_distance).collect();
    Ok(EvalSummary {
        success_rate: 100.0 * episodes.iter().filter(|e| e.success).count() as f64 / k,
        mean_steps: episodes.iter().map(|e| e.steps as f64).sum::<f64>() / k,
        avg_min_distance: (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64),
        mean_final_reward: finals.iter().sum::<f64>() / k,
        mean_episode_reward: returns.iter().sum::<f64>() / k,
        episodes,
        episode_rewards: returns,
        trajectory,
    })
}

/// Uniformly random actions; a baseline and a harness smoke test.
pub struct RandomController {
    pub rng: StreamRng,
}

impl Controller for RandomController {
    fn act(&mut self, teams: &[TeamView<'_>]) -> Result<Vec<Vec<Action>>> {
        Ok(teams
            .iter()
            .map(|t| {
                (0..t.observations.len())
                    .map(|_| Action::ALL[self.rng.random_range(0..Action::COUNT)])
                    .collect()
            })
            .collect())
    }
}
