//! Minimal differentiable tensor engine and the networks built on it.

pub mod autograd;
pub mod checkpoint;
pub mod initial_stage;
pub(crate) mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod velocity;

pub use autograd::{Tape, Var};
pub use initial_stage::{InitialStage, InitialStageConfig};
pub use optim::{AdamWConfig, OptimizerState};
pub use params::{Gradients, ParamId, ParamStore};
pub use velocity::{time_embed, EntryMode, ModelConfig, VelocityNet};
