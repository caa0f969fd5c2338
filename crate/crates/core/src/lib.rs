//! Conditioned rectified flow for image enhancement.
//!
//! A small velocity network learns straight-line transport from Gaussian noise
//! to clean images under guidance derived from a degraded input, and produces
//! results in a handful of network evaluations with Euler or mean-value
//! sampling.
//!
//! * [`flow`]: interpolation, the regression loss, samplers and oracles.
//! * [`nn`]: tape autodiff, the velocity network, the initial-stage model,
//!   AdamW and the checkpoint container.
//! * [`degrade`]: synthetic degradation operators and their composition.
//! * [`pipeline`]: datasets, training, enhancement, metrics and evaluation.
//!
//! With the default `parallel` feature, batch loops fan out over rayon;
//! results never depend on the degree of parallelism.

pub mod error;
pub mod par;
pub mod tensor;
pub mod nn;
pub mod flow;
pub mod degrade;
pub mod pipeline;

pub use error::{Error, Result};
pub use par::Exec;
pub use tensor::Tensor;
