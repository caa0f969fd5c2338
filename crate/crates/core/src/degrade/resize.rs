use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    Bilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Up,
}

/// Scales spatial dims by `1/factor` (down) or `factor` (up), rounding to the
/// nearest integer.
pub fn resize(x: &Tensor, factor: f64, resample: Resample, direction: Direction) -> Result<Tensor> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return Err(Error::domain("resize", format!("factor must be >= 1, got {factor}")));
    }
    let (_, h, w) = x.chw()?;
    let scale = match direction {
        Direction::Down => 1.0 / factor,
        Direction::Up => factor,
    };
    let oh = (h as f64 * scale).round();
    let ow = (w as f64 * scale).round();
    if oh < 1.0 || ow < 1.0 {
        return Err(Error::domain("resize", format!("{h}x{w} by {factor} gives an empty image")));
    }
    resize_to(x, oh as usize, ow as usize, resample)
}

/// Resamples to exactly `out_h x out_w` with half-pixel centres: output pixel
/// `i` samples the input at `(i + 0.5)·in/out − 0.5`.
pub fn resize_to(x: &Tensor, out_h: usize, out_w: usize, resample: Resample) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::domain("resize", "empty output size"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let ys = axis_taps(h, out_h, resample);
    let xs = axis_taps(w, out_w, resample);
    let src = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

/// Source indices and interpolation weight for each output coordinate.
fn axis_taps(n_in: usize, n_out: usize, resample: Resample) -> Vec<(usize, usize, f32)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let s = (i as f64 + 0.5) * ratio - 0.5;
            match resample {
                Resample::Nearest => {
                    // Nearest centre; exact ties go to the lower index.
                    let j = (s - 0.5).ceil().clamp(0.0, (n_in - 1) as f64) as usize;
                    (j, j, 0.0)
                }
                Resample::Bilinear => {
                    let s = s.clamp(0.0, (n_in - 1) as f64);
                    let j0 = s.floor() as usize;
                    let j1 = (j0 + 1).min(n_in - 1);
                    (j0, j1, (s - j0 as f64) as f32)
                }
            }
        })
        .collect()
}
