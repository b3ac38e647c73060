//! Minimal reverse-mode automatic differentiation: tensors, a recording tape,
//! the primitives the policy network needs, Adam, gradient clipping and
//! orthogonal initialization.

mod init;
pub mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use init::orthogonal_init;
pub use optim::{adam_step, clip_global_norm, AdamState};
pub use params::{ParamId, ParamSet, Parameter};
pub use tape::{Grads, Segments, Tape, Var};
pub use tensor::{Scalar, Tensor};
