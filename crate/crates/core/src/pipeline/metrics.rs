use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported for identical images in place of infinity.
pub const PSNR_IDENTICAL: f64 = 99.0;

/// `10·log10(1 / MSE)` for images on a `[0, 1]` scale.
pub fn psnr(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    pred.check_same_shape(reference, "psnr")?;
    let mse = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_IDENTICAL))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Luma for RGB, the single plane for greyscale, otherwise one plane per channel.
fn planes(x: &Tensor) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let (c, h, w) = x.chw()?;
    let hw = h * w;
    let d = x.data();
    let planes = if c == 3 {
        vec![(0..hw)
            .map(|i| 0.299 * d[i] as f64 + 0.587 * d[hw + i] as f64 + 0.114 * d[2 * hw + i] as f64)
            .collect()]
    } else {
        (0..c).map(|ci| d[ci * hw..(ci + 1) * hw].iter().map(|&v| v as f64).collect()).collect()
    };
    Ok((planes, h, w))
}

/// Mean SSIM over all valid window positions with a Gaussian window.
pub fn ssim(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    ssim_with(pred, reference, &SsimParams::default())
}

pub fn ssim_with(pred: &Tensor, reference: &Tensor, p: &SsimParams) -> Result<f64> {
    pred.check_same_shape(reference, "ssim")?;
    let (a, h, w) = planes(pred)?;
    let (b, _, _) = planes(reference)?;
    let n = p.window;
    if n == 0 || h < n || w < n {
        return Err(Error::domain("ssim", format!("image {h}x{w} smaller than the {n}x{n} window")));
    }
    let half = (n / 2) as f64;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * p.sigma * p.sigma)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let mut win = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            win[y * n + x] = g[y] * g[x] / (gs * gs);
        }
    }
    let c1 = (p.k1 * 1.0).powi(2);
    let c2 = (p.k2 * 1.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for (pa, pb) in a.iter().zip(&b) {
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..n {
                    for dx in 0..n {
                        let k = win[dy * n + dx];
                        let i = (y0 + dy) * w + x0 + dx;
                        let (va, vb) = (pa[i], pb[i]);
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let x = Tensor::full(&[3, 4, 4], 0.5);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_IDENTICAL);
        let y = x.map(|v| v + 10.0 / 255.0);
        assert!((psnr(&y, &x).unwrap() - 20.0 * (255.0f64 / 10.0).log10()).abs() < 1e-4);
        let (z, o) = (Tensor::zeros(&[1, 2, 2]), Tensor::full(&[1, 2, 2], 1.0));
        assert!(psnr(&z, &o).unwrap().abs() < 1e-12);
        assert!(psnr(&z, &Tensor::zeros(&[1, 2, 3])).is_err());
    }

    fn checkerboard() -> Tensor {
        let d = (0..3 * 16 * 16).map(|i| (((i % 16) / 2 + (i / 16 % 16) / 2) % 2) as f32).collect();
        Tensor::new(&[3, 16, 16], d).unwrap()
    }

    #[test]
    fn ssim_examples() {
        let x = checkerboard();
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let inv = x.map(|v| 1.0 - v);
        assert!(ssim(&inv, &x).unwrap() < 0.2);
        let c = Tensor::full(&[3, 12, 12], 0.3);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Tensor::zeros(&[3, 8, 8]), &Tensor::zeros(&[3, 8, 8])).is_err());
    }
}
