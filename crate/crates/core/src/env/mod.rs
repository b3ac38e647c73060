//! Deterministic 2-D particle world with double-integrator agents, discrete
//! acceleration actions and static landmarks.

pub mod trajectory;
mod vec_env;
mod world;

pub use vec_env::{Env, VecEnv};
pub use world::{
    distance, observe, reset, step, Action, EnvState, Observation, Point, Transition, WorldConfig,
};
