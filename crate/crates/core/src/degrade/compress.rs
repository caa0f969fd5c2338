//! Block-DCT compression surrogate: 8x8 DCT per channel, quantisation with
//! the standard luminance table scaled by quality, inverse DCT, clamp.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantisation steps for `quality` using the usual quality→scale mapping.
pub fn quant_table(quality: u8) -> Result<[f32; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::domain("compress", format!("quality {quality} outside 1..=100")));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0f32; 64];
    for (o, &base) in out.iter_mut().zip(&LUMA_TABLE) {
        *o = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f32;
    }
    Ok(out)
}

/// Orthonormal DCT-II basis: `basis[u][x]`.
fn dct_basis() -> &'static [[f32; 8]; 8] {
    static BASIS: OnceLock<[[f32; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0f32; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let alpha = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = (alpha * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos()) as f32;
            }
        }
        b
    })
}

fn transform_block(block: &mut [f32; 64], q: &[f32; 64]) {
    let b = dct_basis();
    let mut tmp = [0.0f32; 64];
    // rows: tmp[y][u] = Σx b[u][x] block[y][x]
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut coef = [0.0f32; 64];
    for v in 0..8 {
        for u in 0..8 {
            let c: f32 = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
            let step = q[v * 8 + u];
            coef[v * 8 + u] = (c / step).round() * step;
        }
    }
    // inverse: block[y][x] = Σv Σu b[v][y] b[u][x] coef[v][u]
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
}

/// Compresses each channel independently. Sizes that are not multiples of 8
/// are padded by edge replication and cropped afterwards.
pub fn compress(x: &Tensor, quality: u8) -> Result<Tensor> {
    let q = quant_table(quality)?;
    let (c, h, w) = x.chw()?;
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    let mut block = [0.0f32; 64];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                for y in 0..8 {
                    let sy = (by + y).min(h - 1);
                    for xx in 0..8 {
                        let sx = (bx + xx).min(w - 1);
                        block[y * 8 + xx] = plane[sy * w + sx] * 255.0 - 128.0;
                    }
                }
                transform_block(&mut block, &q);
                for y in 0..8.min(h - by) {
                    for xx in 0..8.min(w - bx) {
                        let v = (block[y * 8 + xx] + 128.0) / 255.0;
                        out[(ci * h + by + y) * w + bx + xx] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psnr(a: &Tensor, b: &Tensor) -> f64 {
        let mse = a.sub(b).unwrap().sq_norm() / a.numel() as f64;
        10.0 * (1.0 / mse).log10()
    }

    fn gradient(h: usize, w: usize) -> Tensor {
        let mut d = vec![];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    d.push(0.1 + 0.8 * (x + y + c) as f32 / (h + w + 2) as f32);
                }
            }
        }
        Tensor::new(&[3, h, w], d).unwrap()
    }

    #[test]
    fn quality_range_checked() {
        assert!(compress(&gradient(8, 8), 0).is_err());
        assert!(compress(&gradient(8, 8), 101).is_err());
        assert_eq!(quant_table(100).unwrap(), [1.0; 64]);
        assert_eq!(quant_table(50).unwrap()[0], 16.0);
    }

    #[test]
    fn high_quality_on_smooth_gradient() {
        let x = gradient(32, 32);
        assert!(psnr(&compress(&x, 100).unwrap(), &x) >= 45.0);
    }

    #[test]
    fn constant_image_only_quantises_dc() {
        let x = Tensor::full(&[3, 16, 16], 0.42);
        let y = compress(&x, 75).unwrap();
        assert!(psnr(&y, &x) >= 50.0);
        // All pixels of a block share one value.
        let first = y.data()[0];
        assert!(y.data()[..256].iter().all(|&v| (v - first).abs() < 1e-5));
    }

    #[test]
    fn odd_sizes_are_supported() {
        let x = gradient(13, 11);
        let y = compress(&x, 60).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(psnr(&y, &x) > 30.0);
    }
}
