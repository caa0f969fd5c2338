use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::flow::{sample, CountingField, SamplerConfig};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::model::FlowModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnhanceOptions {
    pub sampler: SamplerConfig,
    pub use_initial_stage: bool,
    /// Seed of the start noise `z0`.
    pub seed: u64,
}

impl EnhanceOptions {
    /// Inference settings implied by a training configuration.
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            sampler: cfg.ablation.inference_sampler(cfg.sampler),
            use_initial_stage: cfg.ablation.use_initial_stage,
            seed: cfg.eval_seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Enhanced {
    pub image: Tensor,
    /// Velocity-network evaluations spent.
    pub evaluations: usize,
}

/// Seeded standard normal start state.
pub fn start_noise(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Restores one `C x H x W` degraded image.
pub fn enhance(model: &FlowModel, lq: &Tensor, opts: &EnhanceOptions) -> Result<Enhanced> {
    model.net.check_resolution(lq.shape())?;
    opts.sampler.validate()?;
    let guidance = model.guidance(lq, opts.use_initial_stage)?;
    let z0 = start_noise(lq.shape(), opts.seed);
    let field = CountingField::new(model.field());
    let out = sample(&field, &z0, Some(&guidance), &opts.sampler)?;
    Ok(Enhanced {
        image: out.clamp(0.0, 1.0),
        evaluations: field.calls(),
    })
}
