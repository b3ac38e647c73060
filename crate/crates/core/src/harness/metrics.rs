//! CSV metric streams: one header line, then one row per record, flushed as written.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ppo::IterationStats;

/// Training progress, one row per PPO update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    /// Seconds since the run started; 0 in deterministic mode.
    pub wall_time: f64,
    pub agents: usize,
    pub mean_reward: f64,
    /// Percent of episodes finished during collection that succeeded.
    pub success_rate: f64,
    pub mean_episode_length: f64,
    pub avg_min_distance: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub clip_fraction: f64,
}

impl MetricsRow {
    pub fn from_stats(s: &IterationStats, wall_time: f64, agents: usize) -> Self {
        Self {
            iteration: s.iteration,
            wall_time,
            agents,
            mean_reward: s.mean_episode_reward,
            success_rate: s.success_rate,
            mean_episode_length: s.mean_episode_length,
            avg_min_distance: s.avg_min_distance,
            policy_loss: s.policy_loss,
            value_loss: s.value_loss,
            entropy: s.entropy,
            total_loss: s.total_loss,
            clip_fraction: s.clip_fraction,
        }
    }
}

/// Greedy evaluation results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: u64,
    pub agents: usize,
    pub episodes: usize,
    /// Percent.
    pub success_rate: f64,
    /// Steps to success; failures count the full horizon.
    pub mean_steps: f64,
    pub avg_min_distance: Option<f64>,
    pub mean_final_reward: f64,
    pub mean_episode_reward: f64,
}

/// Single-writer CSV stream that writes its header once.
pub struct CsvStream {
    writer: csv::Writer<File>,
}

impl CsvStream {
    pub fn write<R: Serialize>(&mut self, row: &R) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub const METRICS_HEADER: &[&str] = &[
    "iteration",
    "wall_time",
    "agents",
    "mean_reward",
    "success_rate",
    "mean_episode_length",
    "avg_min_distance",
    "policy_loss",
    "value_loss",
    "entropy",
    "total_loss",
    "clip_fraction",
];

pub const EVAL_HEADER: &[&str] = &[
    "iteration",
    "agents",
    "episodes",
    "success_rate",
    "mean_steps",
    "avg_min_distance",
    "mean_final_reward",
    "mean_episode_reward",
];

/// Opens a stream whose header is written up front; later rows carry no header.
pub fn open_stream(path: &Path, header: &[&str]) -> Result<CsvStream> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(header)?;
    writer.flush()?;
    Ok(CsvStream { writer })
}

pub fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
