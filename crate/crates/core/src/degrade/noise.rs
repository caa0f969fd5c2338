use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `clamp(x + sigma·g, 0, 1)` with `g` standard normal drawn from `rng` in
/// element order.
pub fn add_noise<R: Rng + ?Sized>(x: &Tensor, sigma: f64, rng: &mut R) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain("add_noise", format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let s = sigma as f32;
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = (*v + s * rng.sample::<f32, _>(StandardNormal)).clamp(0.0, 1.0);
    }
    Ok(y)
}
