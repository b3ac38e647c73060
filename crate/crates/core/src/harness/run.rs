//! Training, evaluation, curriculum and zero-shot drivers.
//!
//! Output directory layout:
//!
//! ```text
//! config.toml              configuration the run used
//! metrics.csv              one row per PPO update
//! eval.csv                 one row per greedy evaluation
//! checkpoints/iter-N.ckpt  initial, periodic and final parameters
//! final.ckpt               copy of the last checkpoint
//! trajectory.csv           leading episodes of the last evaluation
//! curriculum.csv           curriculum runs only: one row per stage
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::eval::{evaluate, EvalSetup, EvalSummary, NetworkController};
use super::metrics::{open_stream, CsvStream, EvalRow, MetricsRow, EVAL_HEADER, METRICS_HEADER};
use crate::env::trajectory::write_trajectory;
use crate::error::{Error, Result};
use crate::policy::{layout_diff, Policy};
use crate::ppo::Trainer;
use crate::rng;

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Write zero wall times so repeated runs produce identical files.
    pub deterministic: bool,
}

/// Fresh policy and trainer for a team of `agents`.
pub fn new_trainer(cfg: &RunConfig, agents: usize) -> Result<Trainer> {
    let policy = Policy::new(cfg.policy.clone(), &mut rng::stream(cfg.seed, "policy-init", 0))?;
    Trainer::new(policy, cfg.world_for(agents), cfg.task.clone(), cfg.comm.clone(), cfg.ppo.clone())
}

/// Evaluates `policy` on `episodes` freshly seeded episodes with `agents` agents.
/// `round` namespaces the seeds; the policy is only read.
pub fn evaluate_policy(
    policy: &Policy<f32>,
    cfg: &RunConfig,
    agents: usize,
    episodes: usize,
    round: u64,
    greedy: bool,
    record: usize,
) -> Result<EvalSummary> {
    let world = cfg.world_for(agents);
    world.validate()?;
    let mut controller = NetworkController {
        policy,
        greedy,
        rng: rng::stream(cfg.seed, &format!("eval-actions-r{round}-m{agents}"), 0),
    };
    evaluate(
        &mut controller,
        &EvalSetup {
            world: &world,
            task: &cfg.task,
            comm: &cfg.comm,
            episodes,
            round,
            record,
        },
    )
}

fn eval_row(iteration: u64, agents: usize, s: &EvalSummary) -> EvalRow {
    EvalRow {
        iteration,
        agents,
        episodes: s.episodes.len(),
        success_rate: s.success_rate,
        mean_steps: s.mean_steps,
        avg_min_distance: s.avg_min_distance,
        mean_final_reward: s.mean_final_reward,
        mean_episode_reward: s.mean_episode_reward,
    }
}

/// Files shared by every stage of a run.
struct Outputs {
    dir: PathBuf,
    metrics: CsvStream,
    eval: CsvStream,
    started: Instant,
    deterministic: bool,
}

impl Outputs {
    fn create(dir: &Path, cfg: &RunConfig, opts: RunOptions) -> Result<Self> {
        fs::create_dir_all(dir.join("checkpoints"))?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: open_stream(&dir.join("metrics.csv"), METRICS_HEADER)?,
            eval: open_stream(&dir.join("eval.csv"), EVAL_HEADER)?,
            started: Instant::now(),
            deterministic: opts.deterministic,
        })
    }

    fn wall_time(&self) -> f64 {
        if self.deterministic {
            0.0
        } else {
            self.started.elapsed().as_secs_f64()
        }
    }

    fn checkpoint(&self, trainer: &Trainer, cfg: &RunConfig) -> Result<PathBuf> {
        let mut snapshot = cfg.clone();
        snapshot.world.agents = trainer.world().num_agents;
        let ckpt = Checkpoint {
            config_toml: snapshot.to_toml(),
            params: trainer.policy.params.clone(),
            adam: Some(trainer.adam.clone()),
            iteration: trainer.iteration,
            rng_states: trainer.rng_states(),
        };
        let path = self.dir.join("checkpoints").join(format!("iter-{:06}.ckpt", trainer.iteration));
        ckpt.save(&path)?;
        fs::copy(&path, self.dir.join("final.ckpt"))?;
        Ok(path)
    }
}

/// Result of training one team size.
#[derive(Clone, Debug)]
pub struct StageReport {
    pub agents: usize,
    pub updates: usize,
    /// Updates within the stage at which evaluation first met the threshold.
    pub updates_to_threshold: Option<usize>,
    pub last_eval: Option<EvalSummary>,
}

fn run_stage(
    trainer: &mut Trainer,
    cfg: &RunConfig,
    out: &mut Outputs,
    budget: usize,
    stop_at_threshold: bool,
) -> Result<StageReport> {
    let agents = trainer.world().num_agents;
    let threshold = 100.0 * cfg.train.success_threshold;
    let mut report = StageReport {
        agents,
        updates: 0,
        updates_to_threshold: None,
        last_eval: None,
    };
    while report.updates < budget {
        let stats = trainer.train_iteration()?;
        report.updates += 1;
        out.metrics.write(&MetricsRow::from_stats(&stats, out.wall_time(), agents))?;
        let last = report.updates == budget;
        if report.updates % cfg.train.eval_every == 0 || last {
            let record = if last { cfg.train.record_episodes } else { 0 };
            let s = evaluate_policy(
                &trainer.policy,
                cfg,
                agents,
                cfg.train.eval_episodes,
                trainer.iteration,
                true,
                record,
            )?;
            out.eval.write(&eval_row(trainer.iteration, agents, &s))?;
            log::info!(
                "update {} (M={agents}): eval success {:.1}%, train reward {:.3}",
                trainer.iteration,
                s.success_rate,
                stats.mean_episode_reward
            );
            let reached = s.success_rate >= threshold;
            if reached && report.updates_to_threshold.is_none() {
                report.updates_to_threshold = Some(report.updates);
            }
            report.last_eval = Some(s);
            if reached && stop_at_threshold {
                break;
            }
        }
        if report.updates % cfg.train.checkpoint_every.max(1) == 0 {
            out.checkpoint(trainer, cfg)?;
        }
    }
    if let Some(s) = &report.last_eval {
        if !s.trajectory.is_empty() {
            write_trajectory(fs::File::create(out.dir.join("trajectory.csv"))?, &s.trajectory)?;
        }
    }
    Ok(report)
}

/// Plain training at `world.agents` for `train.iterations` updates.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, opts: RunOptions) -> Result<StageReport> {
    cfg.validate()?;
    let mut out = Outputs::create(out_dir, cfg, opts)?;
    let mut trainer = new_trainer(cfg, cfg.world.agents)?;
    out.checkpoint(&trainer, cfg)?;
    let report = run_stage(
        &mut trainer,
        cfg,
        &mut out,
        cfg.train.iterations,
        cfg.train.stop_at_threshold,
    )?;
    out.checkpoint(&trainer, cfg)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumRow {
    pub stage: usize,
    pub agents: usize,
    pub updates: usize,
    pub updates_to_threshold: Option<usize>,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub avg_min_distance: Option<f64>,
}

/// Trains each stage until greedy evaluation meets the threshold, then moves
/// the unchanged parameters to the next team size. The optimizer restarts at
/// every stage. A stage that exhausts its budget ends the run with
/// [`Error::StageFailed`] after its row and checkpoint are written.
pub fn cmd_curriculum(cfg: &RunConfig, out_dir: &Path, opts: RunOptions) -> Result<Vec<StageReport>> {
    cfg.validate()?;
    let stages = &cfg.curriculum.stages;
    let mut out = Outputs::create(out_dir, cfg, opts)?;
    let mut table = open_stream(
        &out_dir.join("curriculum.csv"),
        &[
            "stage",
            "agents",
            "updates",
            "updates_to_threshold",
            "success_rate",
            "mean_steps",
            "avg_min_distance",
        ],
    )?;
    let mut trainer = new_trainer(cfg, stages[0])?;
    out.checkpoint(&trainer, cfg)?;
    let mut reports = Vec::new();
    for (i, &agents) in stages.iter().enumerate() {
        if i > 0 {
            let before = trainer.policy.params.digest();
            trainer.set_world(cfg.world_for(agents))?;
            trainer.reset_optimizer();
            let diff = layout_diff(&cfg.policy.param_layout(), &trainer.policy.params);
            if trainer.policy.params.digest() != before || !diff.is_empty() {
                return Err(Error::precondition(
                    "curriculum transfer",
                    format!("parameters changed at the boundary to M={agents}: {diff:?}"),
                ));
            }
            log::info!("curriculum stage {i}: transferred to M={agents}");
        }
        let report = run_stage(&mut trainer, cfg, &mut out, cfg.curriculum.max_updates_per_stage, true)?;
        out.checkpoint(&trainer, cfg)?;
        let s = report.last_eval.as_ref();
        table.write(&CurriculumRow {
            stage: i,
            agents,
            updates: report.updates,
            updates_to_threshold: report.updates_to_threshold,
            success_rate: s.map_or(0.0, |s| s.success_rate),
            mean_steps: s.map_or(0.0, |s| s.mean_steps),
            avg_min_distance: s.and_then(|s| s.avg_min_distance),
        })?;
        let failed = report.updates_to_threshold.is_none();
        reports.push(report);
        if failed {
            return Err(Error::StageFailed {
                agents,
                updates: cfg.curriculum.max_updates_per_stage,
            });
        }
    }
    Ok(reports)
}

/// Checkpoint plus the configuration to run it under: `cfg` if given,
/// otherwise the snapshot stored in the checkpoint.
pub fn load_run(path: &Path, cfg: Option<&RunConfig>) -> Result<(Checkpoint, RunConfig, Policy<f32>)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = match cfg {
        Some(c) => c.clone(),
        None => RunConfig::from_toml(&ckpt.config_toml)?,
    };
    let policy = ckpt.policy(&cfg.policy)?;
    Ok((ckpt, cfg, policy))
}

/// Greedy or sampled evaluation of a saved policy at `agents` agents.
pub fn cmd_eval(ckpt: &Checkpoint, cfg: &RunConfig, policy: &Policy<f32>, agents: usize, greedy: bool) -> Result<EvalSummary> {
    evaluate_policy(policy, cfg, agents, cfg.train.eval_episodes, ckpt.iteration, greedy, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotRow {
    pub delta: i64,
    pub agents: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub avg_min_distance: Option<f64>,
    pub mean_episode_reward: f64,
}

/// Evaluates a policy trained at `trained_agents` at every `trained_agents + δ`
/// without updates. Sizes below one are skipped and returned as notes.
pub fn cmd_zeroshot(
    ckpt: &Checkpoint,
    cfg: &RunConfig,
    policy: &Policy<f32>,
    trained_agents: usize,
) -> Result<(Vec<ZeroShotRow>, Vec<String>)> {
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for &delta in &cfg.zeroshot.deltas {
        let m = trained_agents as i64 + delta;
        if m < 1 {
            notes.push(format!("skipped delta {delta}: team size {m} is below 1"));
            continue;
        }
        let s = cmd_eval(ckpt, cfg, policy, m as usize, true)?;
        rows.push(ZeroShotRow {
            delta,
            agents: m as usize,
            success_rate: s.success_rate,
            mean_steps: s.mean_steps,
            avg_min_distance: s.avg_min_distance,
            mean_episode_reward: s.mean_episode_reward,
        });
    }
    Ok((rows, notes))
}
