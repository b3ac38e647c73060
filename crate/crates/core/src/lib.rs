//! Decentralized swarm policies on a shared agent-entity graph, trained with
//! multi-agent PPO.
//!
//! The crate is organised bottom-up:
//!
//! * [`gradtape`] – reverse-mode autodiff, Adam and initializers.
//! * [`env`] – the 2-D double-integrator particle world.
//! * [`tasks`] – coverage, formation and line control rewards and goals.
//! * [`comm`] – agent-agent communication masks and dropout.
//! * [`policy`] – the shared attention network.
//! * [`ppo`] – rollouts, GAE and the clipped surrogate update.
//! * [`harness`] – configuration, training/eval loops, checkpoints, rendering.

pub mod comm;
pub mod env;
pub mod error;
pub mod gradtape;
pub mod harness;
pub mod policy;
pub mod ppo;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
