//! Initial-stage restoration network: a small residual CNN whose last layer
//! starts at zero, so a fresh model is the identity map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::autograd::{Tape, Var};
use crate::nn::layers::{Conv2d, Init};
use crate::nn::params::{Gradients, ParamStore};
use crate::par::{self, Exec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialStageConfig {
    pub image_channels: usize,
    pub width: usize,
    /// Hidden 3x3 convolutions between the input and output layers.
    pub depth: usize,
}

impl Default for InitialStageConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            width: 16,
            depth: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InitialStage {
    cfg: InitialStageConfig,
    conv_in: Conv2d,
    hidden: Vec<Conv2d>,
    conv_out: Conv2d,
}

impl InitialStage {
    pub fn new<R: Rng + ?Sized>(cfg: InitialStageConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        if cfg.width == 0 || cfg.image_channels == 0 {
            return Err(Error::domain("InitialStage", "width and channels must be positive"));
        }
        let conv_in = Conv2d::new(store, "tau.conv_in", cfg.image_channels, cfg.width, 3, Init::Kaiming, rng);
        let hidden = (0..cfg.depth)
            .map(|i| Conv2d::new(store, &format!("tau.hidden{i}"), cfg.width, cfg.width, 3, Init::Kaiming, rng))
            .collect();
        let conv_out = Conv2d::new(store, "tau.conv_out", cfg.width, cfg.image_channels, 3, Init::Zero, rng);
        Ok(Self {
            cfg,
            conv_in,
            hidden,
            conv_out,
        })
    }

    pub fn init<R: Rng + ?Sized>(cfg: InitialStageConfig, rng: &mut R) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let tau = Self::new(cfg, &mut store, rng)?;
        Ok((tau, store))
    }

    pub fn config(&self) -> &InitialStageConfig {
        &self.cfg
    }

    /// Unclamped restoration `x + residual(x)` for one sample.
    pub fn record(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.conv_in.forward(tape, x)?;
        let mut h = tape.silu(h);
        for conv in &self.hidden {
            let r = conv.forward(tape, h)?;
            let r = tape.silu(r);
            h = tape.add(h, r)?;
        }
        let r = self.conv_out.forward(tape, h)?;
        let out = tape.add(x, r)?;
        tape.check_finite(out, "tau.conv_out")?;
        Ok(out)
    }

    /// Coarse restoration of a `C x H x W` image or `B x C x H x W` batch,
    /// clamped to `[0, 1]`.
    pub fn restore(&self, params: &ParamStore, lq: &Tensor) -> Result<Tensor> {
        match lq.ndim() {
            3 => self.restore_one(params, lq),
            4 => {
                let items = lq.unstack();
                let outs = par::map_slice(Exec::default(), &items, |_, x| self.restore_one(params, x));
                Tensor::stack(&outs.into_iter().collect::<Result<Vec<_>>>()?)
            }
            _ => Err(Error::shape("InitialStage::restore", format!("unsupported shape {:?}", lq.shape()))),
        }
    }

    fn restore_one(&self, params: &ParamStore, lq: &Tensor) -> Result<Tensor> {
        let (c, _, _) = lq.chw()?;
        if c != self.cfg.image_channels {
            return Err(Error::shape("InitialStage::restore", format!("expected {} channels, got {c}", self.cfg.image_channels)));
        }
        let mut tape = Tape::new(params);
        let x = tape.input(lq.clone());
        let out = self.record(&mut tape, x)?;
        Ok(tape.value(out).clamp(0.0, 1.0))
    }

    /// Mean squared error to `clean` and gradients for one sample.
    pub fn loss_and_grad(&self, params: &ParamStore, lq: &Tensor, clean: &Tensor) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new(params);
        let x = tape.input(lq.clone());
        let out = self.record(&mut tape, x)?;
        let loss = tape.mse_to(out, clean)?;
        let value = tape.value(loss).data()[0] as f64;
        Ok((value, tape.backward(loss)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_model_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (tau, params) = InitialStage::init(InitialStageConfig::default(), &mut rng).unwrap();
        let x = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut rng);
        assert_eq!(tau.restore(&params, &x).unwrap(), x);
    }

    #[test]
    fn output_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (tau, mut params) = InitialStage::init(InitialStageConfig::default(), &mut rng).unwrap();
        // Push the residual hard in both directions.
        for e in params.iter_mut() {
            if e.name.starts_with("tau.conv_out") {
                e.tensor.data_mut().iter_mut().for_each(|v| *v = 3.0);
            }
        }
        for fill in [0.0, 1.0] {
            let x = Tensor::full(&[3, 8, 8], fill);
            let (lo, hi) = tau.restore(&params, &x).unwrap().min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
        }
    }
}
