//! Straight-line transport between noise and data: interpolation, the
//! regression loss, the exact chord oracle, and the two few-step samplers.

mod sampler;
mod sweep;

pub use sampler::{euler_sample, meanvalue_sample, sample, CountingField, FnField, SamplerConfig, SamplerMode, VelocityField};
pub use sweep::{sweep_midpoint, MidpointSweep, SweepItem};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default distance from `t = 1` below which the oracle refuses to divide.
pub const ORACLE_T_EPS: f32 = 1e-6;

/// Endpoints of one transport path: noise `z0` and clean target `z1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub z0: Tensor,
    pub z1: Tensor,
}

impl SamplePair {
    pub fn new(z0: Tensor, z1: Tensor) -> Result<Self> {
        z0.check_same_shape(&z1, "SamplePair")?;
        if !z0.is_finite() || !z1.is_finite() {
            return Err(Error::domain("SamplePair", "endpoints must be finite"));
        }
        Ok(Self { z0, z1 })
    }

    /// The straight-line displacement `z1 − z0`.
    pub fn chord(&self) -> Tensor {
        self.z1.sub(&self.z0).expect("shapes checked at construction")
    }
}

/// A point `z_t` on a path together with its time.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub zt: Tensor,
    pub t: f32,
}

/// `z_t = t·z1 + (1 − t)·z0`.
pub fn interpolate(pair: &SamplePair, t: f32) -> Result<FlowState> {
    pair.z0.check_same_shape(&pair.z1, "interpolate")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain("interpolate", format!("t = {t} outside [0, 1]")));
    }
    let zt = pair.z1.zip_map(&pair.z0, "interpolate", |a, b| t * a + (1.0 - t) * b)?;
    Ok(FlowState { zt, t })
}

/// Mean over all elements of `(z1 − z0 − v_pred)²`, accumulated in `f64`.
pub fn flow_loss(pair: &SamplePair, v_pred: &Tensor) -> Result<f64> {
    pair.z0.check_same_shape(v_pred, "flow_loss")?;
    pair.z0.check_same_shape(&pair.z1, "flow_loss")?;
    let sum: f64 = pair
        .z1
        .data()
        .iter()
        .zip(pair.z0.data())
        .zip(v_pred.data())
        .map(|((&a, &b), &v)| {
            let r = (a as f64 - b as f64) - v as f64;
            r * r
        })
        .sum();
    Ok(sum / v_pred.numel() as f64)
}

/// Exact velocity toward a known target: `(z1 − z_t)/(1 − t)`, which equals
/// `z1 − z0` for any state on the straight path.
pub fn oracle_velocity(z1: &Tensor, state: &FlowState) -> Result<Tensor> {
    oracle_velocity_eps(z1, state, ORACLE_T_EPS)
}

/// [`oracle_velocity`] with an explicit singularity margin.
pub fn oracle_velocity_eps(z1: &Tensor, state: &FlowState, eps: f32) -> Result<Tensor> {
    z1.check_same_shape(&state.zt, "oracle_velocity")?;
    if !(state.t < 1.0 - eps) {
        return Err(Error::Singularity {
            t: state.t,
            limit: 1.0 - eps,
        });
    }
    let denom = 1.0 - state.t as f64;
    z1.zip_map(&state.zt, "oracle_velocity", |a, b| ((a as f64 - b as f64) / denom) as f32)
}
