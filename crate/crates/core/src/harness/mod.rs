//! Experiment orchestration: configuration, checkpoints, metric files,
//! evaluation, training drivers and trajectory rendering.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod render;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use eval::{evaluate, Controller, EvalSetup, EvalSummary, NetworkController, RandomController, ScriptedCoverage, TeamView};
pub use run::{cmd_curriculum, cmd_eval, cmd_train, cmd_zeroshot, load_run, RunOptions, StageReport, ZeroShotRow};
