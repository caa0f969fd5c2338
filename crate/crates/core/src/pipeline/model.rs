use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::flow::VelocityField;
use crate::nn::{InitialStage, InitialStageConfig, ModelConfig, ParamStore, VelocityNet};
use crate::par::Exec;
use crate::tensor::Tensor;

/// The velocity network and the initial-stage model with their parameters.
#[derive(Debug)]
pub struct FlowModel {
    pub net: VelocityNet,
    pub params: ParamStore,
    pub tau: InitialStage,
    pub tau_params: ParamStore,
    coarse_calls: AtomicUsize,
}

impl FlowModel {
    pub fn new(net: VelocityNet, params: ParamStore, tau: InitialStage, tau_params: ParamStore) -> Self {
        Self {
            net,
            params,
            tau,
            tau_params,
            coarse_calls: AtomicUsize::new(0),
        }
    }

    /// Fresh weights drawn from `seed`.
    pub fn init(model: &ModelConfig, tau: &InitialStageConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, params) = VelocityNet::init(model.clone(), &mut rng)?;
        let (tau, tau_params) = InitialStage::init(tau.clone(), &mut rng)?;
        Ok(Self::new(net, params, tau, tau_params))
    }

    /// `τ(lq)`, clamped to `[0, 1]`.
    pub fn coarse_restore(&self, lq: &Tensor) -> Result<Tensor> {
        self.coarse_calls.fetch_add(1, Ordering::Relaxed);
        self.tau.restore(&self.tau_params, lq)
    }

    /// How many times [`FlowModel::coarse_restore`] ran.
    pub fn coarse_calls(&self) -> usize {
        self.coarse_calls.load(Ordering::Relaxed)
    }

    /// Guidance image for the condition: the coarse restoration, or the raw
    /// degraded input when the initial stage is disabled.
    pub fn guidance(&self, lq: &Tensor, use_initial_stage: bool) -> Result<Tensor> {
        if use_initial_stage {
            self.coarse_restore(lq)
        } else {
            Ok(lq.clone())
        }
    }

    pub fn field(&self) -> NetField<'_> {
        NetField { model: self }
    }
}

/// The velocity network as a [`VelocityField`]; the conditioning slot carries
/// the guidance image.
#[derive(Clone, Copy)]
pub struct NetField<'a> {
    model: &'a FlowModel,
}

impl VelocityField for NetField<'_> {
    fn velocity(&self, z: &Tensor, t: f32, cond: Option<&Tensor>) -> Result<Tensor> {
        self.model.net.forward_with(&self.model.params, z, t, cond, Exec::Sequential)
    }
}
