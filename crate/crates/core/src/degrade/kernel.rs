use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of a discretised Gaussian: axis standard deviations and the
/// rotation of the x axis in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub angle: f64,
    pub size: usize,
}

impl GaussianParams {
    pub fn isotropic(sigma: f64, size: usize) -> Self {
        Self {
            sigma_x: sigma,
            sigma_y: sigma,
            angle: 0.0,
            size,
        }
    }
}

/// A non-negative `size x size` kernel that sums to one.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f32>,
}

impl BlurKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.weights[y * self.size + x]
    }

    /// Normalises arbitrary non-negative weights into a kernel.
    pub fn from_weights(size: usize, weights: Vec<f32>) -> Result<Self> {
        if size % 2 == 0 || weights.len() != size * size {
            return Err(Error::domain("BlurKernel", format!("need an odd square kernel, got {} values for size {size}", weights.len())));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::domain("BlurKernel", "weights must be non-negative"));
        }
        let sum: f64 = weights.iter().map(|&w| w as f64).sum();
        if sum <= 0.0 {
            return Err(Error::domain("BlurKernel", "weights sum to zero"));
        }
        Ok(Self {
            size,
            weights: weights.iter().map(|&w| (w as f64 / sum) as f32).collect(),
        })
    }

    pub fn delta(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        if size % 2 == 1 {
            w[size * size / 2] = 1.0;
        }
        Self::from_weights(size, w)
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.size, self.size], self.weights.clone())
    }
}

/// Samples `exp(-½ pᵀ Σ⁻¹ p)` on the integer grid centred in the kernel and
/// normalises to unit sum. `Σ = R diag(σx², σy²) Rᵀ` with `R` the rotation by
/// `angle`.
pub fn gaussian_kernel(p: &GaussianParams) -> Result<BlurKernel> {
    if p.size % 2 == 0 || p.size == 0 {
        return Err(Error::domain("gaussian_kernel", format!("size must be odd, got {}", p.size)));
    }
    if !(p.sigma_x > 0.0 && p.sigma_y > 0.0) {
        return Err(Error::domain("gaussian_kernel", "sigma must be positive"));
    }
    let (s, c) = p.angle.sin_cos();
    let (ix, iy) = (1.0 / (p.sigma_x * p.sigma_x), 1.0 / (p.sigma_y * p.sigma_y));
    // Σ⁻¹ = R diag(1/σx², 1/σy²) Rᵀ
    let a = c * c * ix + s * s * iy;
    let b = c * s * (ix - iy);
    let d = s * s * ix + c * c * iy;
    let half = (p.size / 2) as f64;
    let mut w = Vec::with_capacity(p.size * p.size);
    for yi in 0..p.size {
        for xi in 0..p.size {
            let (x, y) = (xi as f64 - half, yi as f64 - half);
            let q = a * x * x + 2.0 * b * x * y + d * y * y;
            w.push((-0.5 * q).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    Ok(BlurKernel {
        size: p.size,
        weights: w.iter().map(|v| (v / sum) as f32).collect(),
    })
}

/// Mirror index without repeating the edge sample (`-1 → 1`, `n → n − 2`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Per-channel 2-D correlation with reflect padding; shape preserved.
pub fn apply_blur(x: &Tensor, k: &BlurKernel) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if k.size > h || k.size > w {
        return Err(Error::domain(
            "apply_blur",
            format!("kernel {} larger than image {h}x{w}", k.size),
        ));
    }
    let r = (k.size / 2) as isize;
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0f32;
                for ky in 0..k.size {
                    let sy = reflect(y as isize + ky as isize - r, h);
                    let row = &plane[sy * w..(sy + 1) * w];
                    for kx in 0..k.size {
                        let sx = reflect(xx as isize + kx as isize - r, w);
                        acc += k.weights[ky * k.size + kx] * row[sx];
                    }
                }
                out[(ci * h + y) * w + xx] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn tiny_sigma_is_delta() {
        let k = gaussian_kernel(&GaussianParams::isotropic(1e-4, 3)).unwrap();
        assert!(k.at(1, 1) >= 1.0 - 1e-6);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(gaussian_kernel(&GaussianParams::isotropic(1.0, 4)).is_err());
        assert!(gaussian_kernel(&GaussianParams::isotropic(0.0, 3)).is_err());
        assert!(gaussian_kernel(&GaussianParams::isotropic(-1.0, 3)).is_err());
    }

    #[test]
    fn centre_matches_formula() {
        // Independent evaluation: g(x, y) = exp(-(x²+y²)/2) on -2..=2, normalised.
        let mut total = 0.0f64;
        for y in -2i32..=2 {
            for x in -2i32..=2 {
                total += (-((x * x + y * y) as f64) / 2.0).exp();
            }
        }
        let k = gaussian_kernel(&GaussianParams::isotropic(1.0, 5)).unwrap();
        assert!((k.at(2, 2) as f64 - 1.0 / total).abs() < 1e-7);
        // Isotropic kernels are symmetric.
        for y in 0..5 {
            for x in 0..5 {
                assert!((k.at(y, x) - k.at(x, y)).abs() < 1e-9);
                assert!((k.at(y, x) - k.at(4 - y, x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn anisotropic_kernel_is_normalised_and_rotated() {
        let p = GaussianParams {
            sigma_x: 2.0,
            sigma_y: 0.5,
            angle: std::f64::consts::FRAC_PI_2,
            size: 7,
        };
        let k = gaussian_kernel(&p).unwrap();
        let sum: f64 = k.weights().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        // Rotated by 90°: the long axis is vertical.
        assert!(k.at(1, 3) > k.at(3, 1));
    }

    #[test]
    fn delta_and_constant_are_preserved() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::rand_uniform(&[2, 6, 5], 0.0, 1.0, &mut rng);
        assert_eq!(apply_blur(&x, &BlurKernel::delta(3).unwrap()).unwrap(), x);
        let c = Tensor::full(&[1, 6, 6], 0.4);
        let k = gaussian_kernel(&GaussianParams::isotropic(1.3, 5)).unwrap();
        let out = apply_blur(&c, &k).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn kernel_larger_than_image_rejected() {
        let k = BlurKernel::delta(7).unwrap();
        assert!(apply_blur(&Tensor::zeros(&[1, 5, 8]), &k).is_err());
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(0, 1), 0);
    }
}
