//! Parameterised layers. Each layer holds [`ParamId`]s into a shared store.

use rand::Rng;

use crate::error::Result;
use crate::nn::autograd::{Tape, Var};
use crate::nn::params::{kaiming_uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

/// How a layer's weights start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Kaiming,
    Zero,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let shape = [out_channels, fan_in];
        let w = match init {
            Init::Kaiming => kaiming_uniform(&shape, fan_in, rng),
            Init::Zero => Tensor::zeros(&shape),
        };
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.conv2d(x, w, b, self.kernel)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = match init {
            Init::Kaiming => kaiming_uniform(&[outputs, inputs], inputs, rng),
            Init::Zero => Tensor::zeros(&[outputs, inputs]),
        };
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[outputs])),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups: groups.min(channels),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.group_norm(x, g, b, self.groups)
    }
}
