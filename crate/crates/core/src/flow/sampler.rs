use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anything that predicts a velocity for a state `z` at time `t`, optionally
/// guided by a conditioning image.
pub trait VelocityField {
    fn velocity(&self, z: &Tensor, t: f32, cond: Option<&Tensor>) -> Result<Tensor>;
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn velocity(&self, z: &Tensor, t: f32, cond: Option<&Tensor>) -> Result<Tensor> {
        (**self).velocity(z, t, cond)
    }
}

/// Adapts a closure into a [`VelocityField`].
pub struct FnField<F>(pub F);

impl<F> VelocityField for FnField<F>
where
    F: Fn(&Tensor, f32, Option<&Tensor>) -> Result<Tensor>,
{
    fn velocity(&self, z: &Tensor, t: f32, cond: Option<&Tensor>) -> Result<Tensor> {
        (self.0)(z, t, cond)
    }
}

/// Wraps a field and counts its evaluations.
pub struct CountingField<F> {
    inner: F,
    calls: AtomicUsize,
}

impl<F> CountingField<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> F {
        self.inner
    }
}

impl<F: VelocityField> VelocityField for CountingField<F> {
    fn velocity(&self, z: &Tensor, t: f32, cond: Option<&Tensor>) -> Result<Tensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.velocity(z, t, cond)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Euler,
    MeanValue,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SamplerMode::Euler),
            "meanvalue" => Ok(SamplerMode::MeanValue),
            other => Err(Error::domain("SamplerMode", format!("unknown sampler `{other}`"))),
        }
    }
}

/// Sampling schedule on the uniform grid `{0, 1/N, ..., (N−1)/N}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Number of uniform segments `N`; the step is `1/N`.
    pub steps: usize,
    /// Midpoint index `k` (mean-value mode only).
    pub midpoint: usize,
    /// Mean-value variant: jump from `z0` with unit scaling instead of from
    /// the midpoint state with scaling `1 − k/N`.
    #[serde(default)]
    pub jump_from_origin: bool,
}

impl SamplerConfig {
    pub fn euler(steps: usize) -> Self {
        Self {
            mode: SamplerMode::Euler,
            steps,
            midpoint: 0,
            jump_from_origin: false,
        }
    }

    pub fn mean_value(steps: usize, midpoint: usize) -> Self {
        Self {
            mode: SamplerMode::MeanValue,
            steps,
            midpoint,
            jump_from_origin: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::domain("SamplerConfig", "steps must be at least 1"));
        }
        if self.mode == SamplerMode::MeanValue && self.midpoint >= self.steps {
            return Err(Error::domain(
                "SamplerConfig",
                format!("midpoint {} must be below steps {}", self.midpoint, self.steps),
            ));
        }
        Ok(())
    }

    /// Number of velocity evaluations one sample costs.
    pub fn evaluations(&self) -> usize {
        match self.mode {
            SamplerMode::Euler => self.steps,
            SamplerMode::MeanValue => self.midpoint + 1,
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::mean_value(5, 3)
    }
}

fn eval_checked<F: VelocityField>(field: &F, z: &Tensor, t: f32, cond: Option<&Tensor>, step: usize) -> Result<Tensor> {
    let v = field.velocity(z, t, cond)?;
    z.check_same_shape(&v, "velocity field output")?;
    if !v.is_finite() {
        return Err(Error::NonFiniteStep { step });
    }
    Ok(v)
}

/// Forward Euler on the left endpoints: `z ← z + v(z, i/N)/N` for `i < N`.
pub fn euler_sample<F: VelocityField>(field: &F, z0: &Tensor, cond: Option<&Tensor>, cfg: &SamplerConfig) -> Result<Tensor> {
    cfg.validate()?;
    let n = cfg.steps;
    let dt = 1.0 / n as f32;
    let mut z = z0.clone();
    for i in 0..n {
        let t = i as f32 / n as f32;
        let v = eval_checked(field, &z, t, cond, i)?;
        z = z.axpy(dt, &v)?;
    }
    Ok(z)
}

/// `k` Euler steps to time `k/N`, then a single jump along the velocity
/// predicted there: `ẑ + (1 − k/N)·v(ẑ, k/N)`. With `jump_from_origin` the jump
/// is `z0 + v(ẑ, k/N)` instead. Costs exactly `k + 1` evaluations.
pub fn meanvalue_sample<F: VelocityField>(field: &F, z0: &Tensor, cond: Option<&Tensor>, cfg: &SamplerConfig) -> Result<Tensor> {
    let cfg = SamplerConfig {
        mode: SamplerMode::MeanValue,
        ..*cfg
    };
    cfg.validate()?;
    let (n, k) = (cfg.steps, cfg.midpoint);
    let dt = 1.0 / n as f32;
    let mut z = z0.clone();
    for i in 0..k {
        let t = i as f32 / n as f32;
        let v = eval_checked(field, &z, t, cond, i)?;
        z = z.axpy(dt, &v)?;
    }
    let t_mid = k as f32 / n as f32;
    let v_mid = eval_checked(field, &z, t_mid, cond, k)?;
    if cfg.jump_from_origin {
        z0.axpy(1.0, &v_mid)
    } else {
        let remaining = (n - k) as f32 / n as f32;
        z.axpy(remaining, &v_mid)
    }
}

/// Dispatches on `cfg.mode`.
pub fn sample<F: VelocityField>(field: &F, z0: &Tensor, cond: Option<&Tensor>, cfg: &SamplerConfig) -> Result<Tensor> {
    match cfg.mode {
        SamplerMode::Euler => euler_sample(field, z0, cond, cfg),
        SamplerMode::MeanValue => meanvalue_sample(field, z0, cond, cfg),
    }
}
