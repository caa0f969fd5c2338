use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::degrade;
use crate::error::{Error, Result};
use crate::flow::{flow_loss, interpolate, oracle_velocity, FlowState, SamplePair};
use crate::nn::{Gradients, OptimizerState, ParamStore};
use crate::par::{self, Exec};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::dataset::{Dataset, Split};
use crate::pipeline::model::FlowModel;
use crate::tensor::Tensor;

/// Everything drawn for one training example.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub z0: Tensor,
    pub z1: Tensor,
    pub t: f32,
    pub zt: Tensor,
    pub lq: Tensor,
    pub guidance: Tensor,
}

fn hflip(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw().expect("3-D image");
    let mut out = x.clone();
    let d = out.data_mut();
    for row in 0..c * h {
        d[row * w..(row + 1) * w].reverse();
    }
    out
}

/// Draws one seed per sample from `rng`, then, independently per sample:
/// a flip, `z0 ~ N(0, I)`, `t ~ U[0, 1 − ε]` (or `0` without flow), the
/// degradation and the guidance image.
pub fn prepare_samples(
    model: &FlowModel,
    batch: &[Tensor],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    exec: Exec,
) -> Result<Vec<FlowSample>> {
    let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
    let out = par::map_slice(exec, batch, |i, clean| {
        let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
        let z1 = if r.gen_bool(0.5) { hflip(clean) } else { clean.clone() };
        let z0 = Tensor::randn(z1.shape(), &mut r);
        let t = if cfg.ablation.use_flow {
            r.gen_range(0.0..=1.0 - cfg.t_epsilon)
        } else {
            0.0
        };
        let (lq, _) = degrade(&z1, &cfg.degradation, &mut r)?;
        let guidance = model.guidance(&lq, cfg.ablation.use_initial_stage)?;
        let pair = SamplePair::new(z0, z1)?;
        let FlowState { zt, .. } = interpolate(&pair, t)?;
        Ok(FlowSample {
            z0: pair.z0,
            z1: pair.z1,
            t,
            zt,
            lq,
            guidance,
        })
    });
    out.into_iter().collect()
}

/// Batch loss when the exact oracle stands in for the network.
pub fn oracle_batch_loss(samples: &[FlowSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let v = oracle_velocity(&s.z1, &FlowState { zt: s.zt.clone(), t: s.t })?;
        total += flow_loss(&SamplePair::new(s.z0.clone(), s.z1.clone())?, &v)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub times: Vec<f32>,
}

/// One optimisation step on `mean_i ‖z1 − z0 − v(z_t, t, C)‖²`.
pub fn train_step(
    model: &mut FlowModel,
    opt: &mut OptimizerState,
    batch: &[Tensor],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    exec: Exec,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::domain("train_step", "empty batch"));
    }
    let samples = prepare_samples(model, batch, cfg, rng, exec)?;
    let times: Vec<f32> = samples.iter().map(|s| s.t).collect();
    let net = &model.net;
    let params = &model.params;
    let results = par::map_slice(exec, &samples, |_, s| {
        let target = s.z1.sub(&s.z0)?;
        net.loss_and_grad(params, &s.zt, s.t, Some(&s.guidance), &target)
    });
    let mut losses = Vec::with_capacity(results.len());
    let mut grads = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok((l, g)) => {
                losses.push(l);
                grads.push(g);
            }
            Err(Error::NonFiniteLayer { .. }) => losses.push(f64::NAN),
            Err(e) => return Err(e),
        }
    }
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step: opt.step + 1,
            times,
            param_norm: model.params.l2_norm(),
        });
    }
    opt.step(&mut model.params, &Gradients::mean_of(&grads)?)?;
    Ok(StepStats {
        step: opt.step,
        loss,
        times,
    })
}

/// One MSE regression step of the initial-stage model on degraded inputs.
pub fn tau_step(
    model: &mut FlowModel,
    opt: &mut OptimizerState,
    batch: &[Tensor],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    exec: Exec,
) -> Result<f64> {
    let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
    let tau = &model.tau;
    let params = &model.tau_params;
    let results = par::map_slice(exec, batch, |i, clean| {
        let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
        let z1 = if r.gen_bool(0.5) { hflip(clean) } else { clean.clone() };
        let (lq, _) = degrade(&z1, &cfg.degradation, &mut r)?;
        tau.loss_and_grad(params, &lq, &z1)
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let loss = results.iter().map(|(l, _)| l).sum::<f64>() / results.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            step: opt.step + 1,
            times: vec![],
            param_norm: model.tau_params.l2_norm(),
        });
    }
    let grads: Vec<Gradients> = results.into_iter().map(|(_, g)| g).collect();
    opt.step(&mut model.tau_params, &Gradients::mean_of(&grads)?)?;
    Ok(loss)
}

/// Owns a model, both optimisers and the master generator for one run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: FlowModel,
    pub opt: OptimizerState,
    pub tau_opt: OptimizerState,
    pub exec: Exec,
    /// Running average of the flow weights when `cfg.ema_decay` is set.
    pub ema: Option<ParamStore>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let model = FlowModel::init(&cfg.model, &cfg.tau, cfg.seed)?;
        Ok(Self::from_model(cfg, model, exec))
    }

    /// Continues from existing weights with fresh optimiser state.
    pub fn from_model(cfg: TrainConfig, model: FlowModel, exec: Exec) -> Self {
        let opt = OptimizerState::new(cfg.optimizer, &model.params);
        let tau_opt = OptimizerState::new(cfg.tau_optimizer, &model.tau_params);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let ema = cfg.ema_decay.map(|_| model.params.clone());
        Self {
            cfg,
            model,
            opt,
            tau_opt,
            exec,
            ema,
            rng,
        }
    }

    /// `batch_size` training images drawn with replacement.
    pub fn sample_batch(&mut self, data: &Dataset) -> Result<Vec<Tensor>> {
        let ids = data.ids(Split::Train);
        if ids.is_empty() {
            return Err(Error::domain("train", "training split is empty"));
        }
        Ok((0..self.cfg.batch_size)
            .map(|_| data.image(*ids.choose(&mut self.rng).expect("non-empty")).clone())
            .collect())
    }

    /// One flow step at the scheduled learning rate, followed by the EMA update.
    pub fn step(&mut self, batch: &[Tensor]) -> Result<StepStats> {
        let factor = self.cfg.lr_schedule.factor(self.opt.step as usize, self.cfg.total_steps);
        self.opt.config.lr = self.cfg.optimizer.lr * factor;
        let stats = train_step(&mut self.model, &mut self.opt, batch, &self.cfg, &mut self.rng, self.exec)?;
        if let (Some(ema), Some(decay)) = (&mut self.ema, self.cfg.ema_decay) {
            for (e, p) in ema.iter_mut().zip(self.model.params.entries()) {
                for (a, &b) in e.tensor.data_mut().iter_mut().zip(p.tensor.data()) {
                    *a = decay * *a + (1.0 - decay) * b;
                }
            }
        }
        Ok(stats)
    }

    /// Pre-trains the initial stage for `cfg.tau_steps`; skipped when the
    /// initial stage is ablated.
    pub fn pretrain_tau(&mut self, data: &Dataset, mut on_step: impl FnMut(usize, f64)) -> Result<Vec<f64>> {
        if !self.cfg.ablation.use_initial_stage {
            return Ok(vec![]);
        }
        let mut losses = Vec::with_capacity(self.cfg.tau_steps);
        for i in 0..self.cfg.tau_steps {
            let batch = self.sample_batch(data)?;
            let l = tau_step(&mut self.model, &mut self.tau_opt, &batch, &self.cfg, &mut self.rng, self.exec)?;
            on_step(i, l);
            losses.push(l);
        }
        Ok(losses)
    }

    /// Runs `cfg.total_steps` flow steps, then swaps in the EMA weights if any.
    pub fn train(&mut self, data: &Dataset, mut on_step: impl FnMut(&StepStats)) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(self.cfg.total_steps);
        for _ in 0..self.cfg.total_steps {
            let batch = self.sample_batch(data)?;
            let stats = self.step(&batch)?;
            on_step(&stats);
            losses.push(stats.loss);
        }
        if let Some(ema) = &self.ema {
            self.model.params.load_from(ema)?;
        }
        Ok(losses)
    }
}
