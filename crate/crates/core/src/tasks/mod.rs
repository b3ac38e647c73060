//! Swarm tasks: shared team rewards, goal predicates and episode metrics.

mod assignment;
pub mod coverage;
pub mod formation;
pub mod line;

use serde::{Deserialize, Serialize};

pub use assignment::{hungarian, matching_cost, Assignment};

use crate::env::Point;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Coverage,
    Formation,
    Line,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Coverage => "coverage",
            TaskKind::Formation => "formation",
            TaskKind::Line => "line",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// A landmark (or line target) counts as covered within this distance.
    pub cover_threshold: f64,
    pub formation_radius: f64,
    pub radial_tolerance: f64,
    /// Radians.
    pub angular_tolerance: f64,
    /// Upper bound on any per-landmark or per-agent distance penalty.
    pub distance_clip: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Coverage,
            cover_threshold: 0.1,
            formation_radius: 0.5,
            radial_tolerance: 0.05,
            angular_tolerance: 0.1,
            distance_clip: 1.0,
        }
    }
}

impl TaskConfig {
    pub fn new(kind: TaskKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cover_threshold", self.cover_threshold),
            ("formation_radius", self.formation_radius),
            ("radial_tolerance", self.radial_tolerance),
            ("angular_tolerance", self.angular_tolerance),
            ("distance_clip", self.distance_clip),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("task.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Landmarks the task places for a team of `agents`.
    pub fn num_landmarks(&self, agents: usize) -> usize {
        match self.kind {
            TaskKind::Coverage => agents,
            TaskKind::Formation => 1,
            TaskKind::Line => 2,
        }
    }

    /// Shared team reward for the given configuration; always `<= 0`.
    pub fn reward(&self, agents: &[Point], landmarks: &[Point]) -> f64 {
        match self.kind {
            TaskKind::Coverage => coverage::coverage_reward(agents, landmarks, self.distance_clip),
            TaskKind::Formation => formation::formation_reward(
                agents,
                landmarks[0],
                self.formation_radius,
                self.distance_clip,
            ),
            TaskKind::Line => line::line_reward(agents, [landmarks[0], landmarks[1]], self.distance_clip),
        }
    }

    pub fn success(&self, agents: &[Point], landmarks: &[Point]) -> bool {
        match self.kind {
            TaskKind::Coverage => coverage::coverage_success(agents, landmarks, self.cover_threshold),
            TaskKind::Formation => formation::formation_success(
                agents,
                landmarks[0],
                self.formation_radius,
                self.radial_tolerance,
                self.angular_tolerance,
            ),
            TaskKind::Line => line::line_success(agents, [landmarks[0], landmarks[1]], self.cover_threshold),
        }
    }

    /// Coverage-only diagnostic; `None` for the other tasks.
    pub fn avg_min_distance(&self, agents: &[Point], landmarks: &[Point]) -> Option<f64> {
        (self.kind == TaskKind::Coverage).then(|| coverage::avg_min_distance(agents, landmarks))
    }
}

/// Outcome of one finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub steps: usize,
    pub avg_min_distance: Option<f64>,
    pub final_reward: f64,
}
